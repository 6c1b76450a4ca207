use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Block layout of the concatenated pair sequence `[tok_x, X, tok_y, Y]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockBounds {
    pub t_x: usize,
    pub t_y: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    X,
    Y,
}

impl BlockBounds {
    pub fn new(t_x: usize, t_y: usize) -> Result<Self> {
        if t_x == 0 || t_y == 0 {
            return Err(Error::EmptyClip);
        }
        Ok(Self { t_x, t_y })
    }

    /// Total length `T_x + T_y + 2`.
    pub fn len(&self) -> usize {
        self.t_x + self.t_y + 2
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn token_x(&self) -> usize {
        0
    }

    pub fn clip_x(&self) -> Range<usize> {
        1..self.t_x + 1
    }

    pub fn token_y(&self) -> usize {
        self.t_x + 1
    }

    pub fn clip_y(&self) -> Range<usize> {
        self.t_x + 2..self.len()
    }

    /// Token plus frames of the first clip.
    pub fn x_block(&self) -> Range<usize> {
        0..self.t_x + 1
    }

    /// Token plus frames of the second clip.
    pub fn y_block(&self) -> Range<usize> {
        self.t_x + 1..self.len()
    }

    pub fn side(&self, pos: usize) -> Side {
        if pos <= self.t_x {
            Side::X
        } else {
            Side::Y
        }
    }

    pub fn is_token(&self, pos: usize) -> bool {
        pos == self.token_x() || pos == self.token_y()
    }
}

/// Boolean key-allowance matrix `[L_q × L_k]`; `allow(i, j)` means query `i`
/// may attend to key `j`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttentionMask {
    rows: usize,
    cols: usize,
    allow: Vec<bool>,
    bounds: Option<BlockBounds>,
}

impl AttentionMask {
    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut allow = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                allow.push(f(i, j));
            }
        }
        Self {
            rows,
            cols,
            allow,
            bounds: None,
        }
    }

    /// Everything allowed.
    pub fn full(rows: usize, cols: usize) -> Self {
        Self::from_fn(rows, cols, |_, _| true)
    }

    /// Lower-triangular mask for autoregressive self-attention.
    pub fn causal(n: usize) -> Self {
        Self::from_fn(n, n, |i, j| j <= i)
    }

    /// Positions may only attend to the opposite clip's block. With
    /// `token_self` the two special tokens may also attend to themselves.
    pub fn cross_only(bounds: BlockBounds, token_self: bool) -> Self {
        let n = bounds.len();
        let mut mask = Self::from_fn(n, n, |i, j| {
            bounds.side(i) != bounds.side(j) || (token_self && i == j && bounds.is_token(i))
        });
        mask.bounds = Some(bounds);
        mask
    }

    /// Unrestricted self-attention over a pair sequence, keeping the block layout.
    pub fn unmasked(bounds: BlockBounds) -> Self {
        let mut mask = Self::full(bounds.len(), bounds.len());
        mask.bounds = Some(bounds);
        mask
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn allowed(&self, i: usize, j: usize) -> bool {
        self.allow[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[bool] {
        &self.allow[i * self.cols..(i + 1) * self.cols]
    }

    pub fn block_bounds(&self) -> Option<BlockBounds> {
        self.bounds
    }

    /// First query row with no allowed key, if any.
    pub fn first_degenerate_row(&self) -> Option<usize> {
        (0..self.rows).find(|&i| !self.row(i).iter().any(|&a| a))
    }
}

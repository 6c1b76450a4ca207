//! Neural layers built on [`Graph`] operations. Each layer owns only
//! [`ParamId`]s; values live in the shared [`ParamStore`].

use rand::Rng;

use crate::error::{Error, Result};
use crate::numcore::{AttentionMask, Graph, ParamId, ParamStore, Tensor, Var};

pub const EMBEDDING_INIT_STD: f64 = 0.02;

/// Uniform `±1/sqrt(fan_in)` matrix.
pub fn init_matrix<R: Rng + ?Sized>(rows: usize, fan_in: usize, rng: &mut R) -> Tensor {
    Tensor::uniform(&[rows, fan_in], 1.0 / (fan_in as f64).sqrt(), rng)
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let weight = store.register(format!("{name}.weight"), init_matrix(out_dim, in_dim, rng))?;
        let bias = store.register(format!("{name}.bias"), Tensor::zeros(&[out_dim]))?;
        Ok(Self {
            weight,
            bias,
            in_dim,
            out_dim,
        })
    }

    /// `x [L×in] → [L×out]`, one row per position.
    pub fn forward_rows(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        let y = g.matmul_t(x, false, w, true)?;
        g.add_row_bias(y, b)
    }

    /// `x [in×T] → [out×T]`, one column per frame.
    pub fn forward_cols(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        let y = g.matmul(w, x)?;
        g.add_col_bias(y, b)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Result<Self> {
        Ok(Self {
            gamma: store.register(format!("{name}.gamma"), Tensor::full(&[dim], 1.0))?,
            beta: store.register(format!("{name}.beta"), Tensor::zeros(&[dim]))?,
        })
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let gamma = g.param(self.gamma);
        let beta = g.param(self.beta);
        g.layer_norm_rows(x, gamma, beta)
    }
}

#[derive(Clone, Debug)]
pub struct Embedding {
    pub table: ParamId,
    pub vocab: usize,
    pub dim: usize,
}

impl Embedding {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        vocab: usize,
        dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let table = store.register(
            format!("{name}.table"),
            Tensor::normal(&[vocab, dim], EMBEDDING_INIT_STD, rng),
        )?;
        Ok(Self { table, vocab, dim })
    }

    pub fn lookup(&self, g: &mut Graph, ids: &[usize]) -> Result<Var> {
        let table = g.param(self.table);
        g.gather_rows(table, ids)
    }
}

/// Sinusoidal encoding for the given positions, `[positions.len() × dim]`.
pub fn sinusoidal_encoding(positions: &[usize], dim: usize) -> Tensor {
    let mut data = Vec::with_capacity(positions.len() * dim);
    for &pos in positions {
        for i in 0..dim {
            let pair = (i / 2) as f64;
            let angle = pos as f64 / 10000f64.powf(2.0 * pair / dim as f64);
            data.push(if i % 2 == 0 { angle.sin() } else { angle.cos() });
        }
    }
    Tensor::from_parts(vec![positions.len(), dim], data)
}

/// Output of one attention call: the mixed values and the per-head weight
/// matrices `[L_q × L_k]`.
pub struct Attended {
    pub output: Var,
    pub weights: Vec<Var>,
}

/// Projected keys and values of a memory sequence, reusable across queries.
#[derive(Clone, Copy, Debug)]
pub struct ProjectedMemory {
    pub keys: Var,
    pub values: Var,
}

#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
    pub hidden: usize,
}

impl MultiHeadAttention {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        hidden: usize,
        heads: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if heads == 0 || !hidden.is_multiple_of(heads) {
            return Err(Error::Config(format!(
                "hidden size {hidden} is not divisible by {heads} heads"
            )));
        }
        Ok(Self {
            q: Linear::new(store, &format!("{name}.q"), hidden, hidden, rng)?,
            k: Linear::new(store, &format!("{name}.k"), hidden, hidden, rng)?,
            v: Linear::new(store, &format!("{name}.v"), hidden, hidden, rng)?,
            o: Linear::new(store, &format!("{name}.o"), hidden, hidden, rng)?,
            heads,
            hidden,
        })
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }

    pub fn project_memory(&self, g: &mut Graph, memory: Var) -> Result<ProjectedMemory> {
        Ok(ProjectedMemory {
            keys: self.k.forward_rows(g, memory)?,
            values: self.v.forward_rows(g, memory)?,
        })
    }

    /// Attention of `query [L_q×H]` over `memory [L_k×H]`.
    pub fn forward(
        &self,
        g: &mut Graph,
        query: Var,
        memory: Var,
        mask: Option<&AttentionMask>,
    ) -> Result<Attended> {
        let mem = self.project_memory(g, memory)?;
        self.attend(g, query, mem, mask)
    }

    pub fn attend(
        &self,
        g: &mut Graph,
        query: Var,
        mem: ProjectedMemory,
        mask: Option<&AttentionMask>,
    ) -> Result<Attended> {
        let lq = g.value(query).rows();
        let lk = g.value(mem.keys).rows();
        if let Some(m) = mask {
            if m.rows() != lq || m.cols() != lk {
                return Err(Error::Shape(format!(
                    "mask {}x{} for attention {lq}x{lk}",
                    m.rows(),
                    m.cols()
                )));
            }
        }
        let q = self.q.forward_rows(g, query)?;
        let d = self.head_dim();
        let scale = 1.0 / (d as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        let mut weights = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = g.slice_cols(q, h * d, d)?;
            let kh = g.slice_cols(mem.keys, h * d, d)?;
            let vh = g.slice_cols(mem.values, h * d, d)?;
            let scores = g.matmul_t(qh, false, kh, true)?;
            let scores = g.scale(scores, scale);
            let w = g.softmax(scores, mask)?;
            outs.push(g.matmul(w, vh)?);
            weights.push(w);
        }
        let joined = g.concat_cols(&outs)?;
        let output = self.o.forward_rows(g, joined)?;
        Ok(Attended { output, weights })
    }
}

/// Stacks per-head weight matrices into `[heads × L_q × L_k]`.
pub fn stack_head_weights(g: &Graph, weights: &[Var]) -> Tensor {
    let first = g.value(weights[0]);
    let (r, c) = first.dims2().expect("matrix");
    let mut data = Vec::with_capacity(weights.len() * r * c);
    for &w in weights {
        data.extend_from_slice(g.value(w).data());
    }
    Tensor::from_parts(vec![weights.len(), r, c], data)
}

/// Mean over heads of `[heads × L_q × L_k]`, giving `[L_q × L_k]`.
pub fn average_heads(weights: &Tensor) -> Tensor {
    let s = weights.shape();
    let (h, r, c) = (s[0], s[1], s[2]);
    let mut out = vec![0.0; r * c];
    for head in weights.data().chunks(r * c) {
        out.iter_mut().zip(head).for_each(|(o, w)| *o += w);
    }
    out.iter_mut().for_each(|o| *o /= h as f64);
    Tensor::from_parts(vec![r, c], out)
}

#[derive(Clone, Debug)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

impl FeedForward {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        hidden: usize,
        ff_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            up: Linear::new(store, &format!("{name}.up"), hidden, ff_dim, rng)?,
            down: Linear::new(store, &format!("{name}.down"), ff_dim, hidden, rng)?,
        })
    }

    pub fn forward(&self, g: &mut Graph, x: Var, dropout: f64) -> Result<Var> {
        let h = self.up.forward_rows(g, x)?;
        let h = g.relu(h);
        let h = g.dropout(h, dropout)?;
        self.down.forward_rows(g, h)
    }
}

#[derive(Clone, Debug)]
pub struct LstmDirection {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub bias: ParamId,
}

impl LstmDirection {
    fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            w_ih: store.register(format!("{name}.w_ih"), init_matrix(4 * hidden, input, rng))?,
            w_hh: store.register(format!("{name}.w_hh"), init_matrix(4 * hidden, hidden, rng))?,
            bias: store.register(format!("{name}.bias"), Tensor::zeros(&[4 * hidden]))?,
        })
    }

    fn run(&self, g: &mut Graph, x: Var, reverse: bool) -> Result<Var> {
        let (w_ih, w_hh, bias) = (g.param(self.w_ih), g.param(self.w_hh), g.param(self.bias));
        g.lstm(x, w_ih, w_hh, bias, reverse)
    }
}

/// Single-layer bidirectional LSTM followed by mean pooling over time.
#[derive(Clone, Debug)]
pub struct BiLstmPool {
    pub forward: LstmDirection,
    pub backward: LstmDirection,
    pub input: usize,
    pub hidden: usize,
}

impl BiLstmPool {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            forward: LstmDirection::new(store, &format!("{name}.fwd"), input, hidden, rng)?,
            backward: LstmDirection::new(store, &format!("{name}.bwd"), input, hidden, rng)?,
            input,
            hidden,
        })
    }

    /// Embedding size `2 × hidden`.
    pub fn output_dim(&self) -> usize {
        2 * self.hidden
    }

    /// `seq [D×T] → [2h]`: concatenated forward/backward states averaged over time.
    pub fn pool(&self, g: &mut Graph, seq: Var) -> Result<Var> {
        let (d, _) = g.value(seq).dims2()?;
        if d != self.input {
            return Err(Error::Shape(format!(
                "bilstm expects {} input rows, got {d}",
                self.input
            )));
        }
        let f = self.forward.run(g, seq, false)?;
        let b = self.backward.run(g, seq, true)?;
        let both = g.concat_rows(&[f, b])?;
        g.mean_cols(both)
    }

    /// Pools columns `range` of `seq`; an empty range is an error.
    pub fn pool_range(
        &self,
        g: &mut Graph,
        seq: Var,
        range: std::ops::Range<usize>,
    ) -> Result<Var> {
        if range.is_empty() {
            return Err(Error::EmptySequence);
        }
        let view = g.slice_cols(seq, range.start, range.len())?;
        self.pool(g, view)
    }
}

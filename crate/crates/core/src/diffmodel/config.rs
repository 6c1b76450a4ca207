use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Encoder self-attention pattern.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskMode {
    /// Each position attends only to the opposite clip's block.
    CrossOnly,
    /// Plain transformer encoder.
    None,
}

/// How sinusoidal positions are assigned along `[tok_x, X, tok_y, Y]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositionMode {
    /// One index `0..T_x+T_y+1` across the whole sequence.
    Continuous,
    /// Indices restart at 0 on the second clip's token.
    Restart,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub hidden: usize,
    pub heads: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub ff_dim: usize,
    pub dropout: f64,
    pub vocab_size: usize,
    /// Maximum number of generated tokens, end-of-sequence included. The
    /// decoder input (begin token plus prefix) is bounded by the same value.
    pub max_caption_len: usize,
    pub input_feature_dim: usize,
    pub mask: MaskMode,
    /// Lets the two special tokens attend to themselves under `CrossOnly`.
    pub token_self_attention: bool,
    pub positions: PositionMode,
}

impl ModelConfig {
    /// Desk-scale default: H=64, 4 heads, one encoder and one decoder layer.
    pub fn desk(vocab_size: usize) -> Self {
        Self {
            hidden: 64,
            heads: 4,
            encoder_layers: 1,
            decoder_layers: 1,
            ff_dim: 128,
            dropout: 0.1,
            vocab_size,
            max_caption_len: 16,
            input_feature_dim: 64,
            mask: MaskMode::CrossOnly,
            token_self_attention: false,
            positions: PositionMode::Continuous,
        }
    }

    /// Full-size layers: H=768, 4 heads, feed-forward 512.
    pub fn full(vocab_size: usize) -> Self {
        Self {
            hidden: 768,
            ff_dim: 512,
            ..Self::desk(vocab_size)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || !self.hidden.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "hidden size {} must be even",
                self.hidden
            )));
        }
        if self.heads == 0 || !self.hidden.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "hidden size {} is not divisible by {} heads",
                self.hidden, self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        if self.vocab_size < 5
            || self.max_caption_len < 1
            || self.input_feature_dim == 0
            || self.ff_dim == 0
        {
            return Err(Error::Config(
                "vocabulary, caption length, feature and feed-forward sizes must be positive"
                    .into(),
            ));
        }
        Ok(())
    }
}

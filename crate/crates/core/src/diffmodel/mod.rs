//! The difference-captioning network: a per-frame frontend, the special
//! token / concatenation / positional-encoding pipeline, the
//! cross-attention-concentrated encoder and a transformer caption decoder.

mod beam;
mod config;
mod model;

pub use beam::{beam_search, greedy_decode, BeamConfig, Hypothesis, ModelScorer, StepScorer};
pub use config::{MaskMode, ModelConfig, PositionMode};
pub use model::{
    build_cross_attention_mask, snapshot, AdcModel, DecoderLayer, DecoderMemory, EncodedVars,
    EncoderLayer, EncoderState,
};

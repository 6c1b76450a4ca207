//! Audio difference captioning at desk scale.
//!
//! Two feature sequences go in; an instruction-form caption describing how
//! to turn the first clip into the second comes out. The crate contains the
//! numeric substrate ([`numcore`]), the encoder/decoder network
//! ([`diffmodel`]), the similarity/discrepancy auxiliary loss ([`sddloss`]),
//! a synthetic paired-data generator ([`pairsynth`]), caption metrics
//! ([`capmetrics`]) and the training/evaluation harness ([`harness`]).

pub mod error;
pub mod numcore;

pub use error::{Error, Result};
pub mod capmetrics;
pub mod diffmodel;
pub mod harness;
pub mod pairsynth;
pub mod sddloss;

//! Synthetic paired clips at the level of log band energies, with
//! instruction captions and the caption vocabulary.

pub mod captions;
pub mod dataset;
pub mod spec;
pub mod synth;
pub mod vocab;

pub use captions::{all_captions, cell_captions, render_captions};
pub use dataset::{
    build_dataset, load_manifest, read_manifest, DatasetConfig, DatasetPaths, LoadedPair,
    ManifestRecord,
};
pub use spec::{
    Background, DifferenceType, Direction, EventClass, EventSpec, PairSpec, SoundClass, Split,
    BANDS, FRAMES,
};
pub use synth::{
    clip_energy, clip_features, pair_spec, synth_pair, synth_pair_with, CaptionedPair, SynthConfig,
};
pub use vocab::{normalize, Vocabulary, BOS, EOS, PAD, UNK};

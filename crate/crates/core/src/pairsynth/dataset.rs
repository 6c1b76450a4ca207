use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::Tensor;
use crate::pairsynth::spec::{PairSpec, Split};
use crate::pairsynth::synth::{pair_spec, synth_pair_with, SynthConfig};
use crate::pairsynth::vocab::Vocabulary;

pub const FEATURE_MAGIC: &[u8; 4] = b"ADCF";
pub const FEATURE_VERSION: u32 = 1;
const HEADER_LEN: usize = 20;

pub const VOCAB_FILE: &str = "vocab.txt";

pub fn manifest_name(split: Split) -> String {
    format!("{}.jsonl", split.name())
}

pub fn feature_name(split: Split) -> String {
    format!("{}.adcf", split.name())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    /// Feature file name, relative to the manifest's directory.
    pub feature_file: String,
    /// Byte offsets of the first and second clip in the feature file.
    pub offsets: [u64; 2],
    pub captions: Vec<String>,
    pub spec: PairSpec,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LoadedPair {
    pub id: String,
    pub features_x: Tensor,
    pub features_y: Tensor,
    pub captions: Vec<String>,
    pub spec: PairSpec,
}

#[derive(Clone, Debug)]
pub struct DatasetConfig {
    pub n_dev: usize,
    pub n_eval: usize,
    pub seed: u64,
    pub synth: SynthConfig,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            n_dev: 2000,
            n_eval: 400,
            seed: 0,
            synth: SynthConfig::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct DatasetPaths {
    pub dev_manifest: PathBuf,
    pub eval_manifest: PathBuf,
    pub vocab: PathBuf,
}

fn write_split(dir: &Path, split: Split, n: usize, cfg: &DatasetConfig) -> Result<PathBuf> {
    let feat_name = feature_name(split);
    let feat_path = dir.join(&feat_name);
    let man_path = dir.join(manifest_name(split));
    let (f_n, t_n) = (cfg.synth.bands, cfg.synth.frames);
    let mut feats = BufWriter::new(File::create(&feat_path).map_err(|e| Error::io(&feat_path, e))?);
    let mut manifest =
        BufWriter::new(File::create(&man_path).map_err(|e| Error::io(&man_path, e))?);
    let mut header = Vec::with_capacity(HEADER_LEN);
    header.extend_from_slice(FEATURE_MAGIC);
    for v in [FEATURE_VERSION, f_n as u32, t_n as u32, n as u32] {
        header.extend_from_slice(&v.to_le_bytes());
    }
    feats
        .write_all(&header)
        .map_err(|e| Error::io(&feat_path, e))?;
    let clip_bytes = (f_n * t_n * 4) as u64;
    let mut offset = HEADER_LEN as u64;
    let mut buf = Vec::with_capacity(clip_bytes as usize);
    for i in 0..n {
        let spec = pair_spec(cfg.seed, split, i, t_n);
        let pair = synth_pair_with(spec, &cfg.synth)?;
        for clip in [&pair.features_x, &pair.features_y] {
            buf.clear();
            for &v in clip.data() {
                buf.extend_from_slice(&(v as f32).to_le_bytes());
            }
            feats
                .write_all(&buf)
                .map_err(|e| Error::io(&feat_path, e))?;
        }
        let rec = ManifestRecord {
            id: format!("{}-{:05}", split.name(), i),
            feature_file: feat_name.clone(),
            offsets: [offset, offset + clip_bytes],
            captions: pair.captions,
            spec: pair.spec,
        };
        offset += 2 * clip_bytes;
        serde_json::to_writer(&mut manifest, &rec)?;
        manifest
            .write_all(b"\n")
            .map_err(|e| Error::io(&man_path, e))?;
    }
    feats.flush().map_err(|e| Error::io(&feat_path, e))?;
    manifest.flush().map_err(|e| Error::io(&man_path, e))?;
    Ok(man_path)
}

/// Writes `dev.jsonl`, `dev.adcf`, `eval.jsonl`, `eval.adcf` and `vocab.txt`
/// into `dir`, creating it if needed.
pub fn build_dataset(dir: &Path, cfg: &DatasetConfig) -> Result<DatasetPaths> {
    if cfg.n_dev == 0 || cfg.n_eval == 0 {
        return Err(Error::Config("pair counts must be at least 1".into()));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let dev_manifest = write_split(dir, Split::Dev, cfg.n_dev, cfg)?;
    let eval_manifest = write_split(dir, Split::Eval, cfg.n_eval, cfg)?;
    let vocab = dir.join(VOCAB_FILE);
    Vocabulary::from_templates().save(&vocab)?;
    Ok(DatasetPaths {
        dev_manifest,
        eval_manifest,
        vocab,
    })
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| Error::Format(format!("{}:{}: {e}", path.display(), i + 1)))
        })
        .collect()
}

struct FeatureFile {
    bytes: Vec<u8>,
    bands: usize,
    frames: usize,
}

impl FeatureFile {
    fn open(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.len() < HEADER_LEN || &bytes[..4] != FEATURE_MAGIC {
            return Err(Error::Format(format!(
                "{} is not a feature file",
                path.display()
            )));
        }
        let word = |i: usize| {
            u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().expect("4 bytes")) as usize
        };
        if word(0) != FEATURE_VERSION as usize {
            return Err(Error::Format(format!(
                "{}: unsupported version {}",
                path.display(),
                word(0)
            )));
        }
        let (bands, frames, pairs) = (word(1), word(2), word(3));
        if bytes.len() != HEADER_LEN + pairs * 2 * bands * frames * 4 {
            return Err(Error::Format(format!(
                "{}: size does not match header",
                path.display()
            )));
        }
        Ok(Self {
            bytes,
            bands,
            frames,
        })
    }

    fn clip(&self, offset: u64) -> Result<Tensor> {
        let n = self.bands * self.frames;
        let start = offset as usize;
        let end = start + 4 * n;
        if start < HEADER_LEN || end > self.bytes.len() {
            return Err(Error::Format(format!("clip offset {offset} out of range")));
        }
        let data = self.bytes[start..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect();
        Tensor::new(&[self.bands, self.frames], data)
    }
}

/// Loads every pair of a manifest with its features.
pub fn load_manifest(path: &Path) -> Result<Vec<LoadedPair>> {
    let records = read_manifest(path)?;
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut files: HashMap<String, FeatureFile> = HashMap::new();
    let mut out = Vec::with_capacity(records.len());
    for rec in records {
        if !files.contains_key(&rec.feature_file) {
            let f = FeatureFile::open(&dir.join(&rec.feature_file))?;
            files.insert(rec.feature_file.clone(), f);
        }
        let file = &files[&rec.feature_file];
        out.push(LoadedPair {
            features_x: file.clip(rec.offsets[0])?,
            features_y: file.clip(rec.offsets[1])?,
            id: rec.id,
            captions: rec.captions,
            spec: rec.spec,
        });
    }
    Ok(out)
}

//! Binary checkpoints: magic `ADCK`, a little-endian `u32` version, a `u64`
//! metadata length, the JSON metadata, then every parameter as raw
//! little-endian `f64` in metadata order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diffmodel::{AdcModel, ModelConfig};
use crate::error::{Error, Result};
use crate::numcore::Tensor;
use crate::sddloss::SddConfig;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"ADCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub version: u32,
    pub model: ModelConfig,
    pub sdd: SddConfig,
    pub vocab_hash: String,
    pub epoch: usize,
    pub best_val_loss: f64,
    /// Seed the parameters were initialised from.
    pub init_seed: u64,
    pub params: Vec<ParamEntry>,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub model: AdcModel,
}

impl Checkpoint {
    pub fn new(
        model: AdcModel,
        vocab_hash: String,
        epoch: usize,
        best_val_loss: f64,
        init_seed: u64,
    ) -> Self {
        let params = model
            .store
            .ids()
            .map(|id| ParamEntry {
                name: model.store.name(id).to_owned(),
                shape: model.store.get(id).shape().to_vec(),
            })
            .collect();
        Self {
            meta: CheckpointMeta {
                version: CHECKPOINT_VERSION,
                model: model.config.clone(),
                sdd: model.sdd.clone(),
                vocab_hash,
                epoch,
                best_val_loss,
                init_seed,
                params,
            },
            model,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = serde_json::to_vec(&self.meta)?;
        let mut out = Vec::with_capacity(16 + meta.len() + 8 * self.model.store.num_scalars());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(&meta);
        for id in self.model.store.ids() {
            for v in self.model.store.get(id).data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Format(format!("checkpoint: {m}"));
        if bytes.len() < 16 || &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(bad("missing ADCK header"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let meta_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let meta_end = 16usize
            .checked_add(meta_len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| bad("truncated metadata"))?;
        let meta: CheckpointMeta = serde_json::from_slice(&bytes[16..meta_end])?;
        let mut model = AdcModel::new(meta.model.clone(), meta.sdd.clone(), meta.init_seed)?;
        if model.store.len() != meta.params.len() {
            return Err(bad("parameter count differs from the model layout"));
        }
        let mut pos = meta_end;
        for entry in &meta.params {
            let id = model
                .store
                .lookup(&entry.name)
                .ok_or_else(|| bad(&format!("unknown parameter {}", entry.name)))?;
            let n: usize = entry.shape.iter().product();
            let end = pos + 8 * n;
            if end > bytes.len() {
                return Err(bad("truncated parameter data"));
            }
            let data = bytes[pos..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            model.store.set(id, Tensor::new(&entry.shape, data)?)?;
            pos = end;
        }
        if pos != bytes.len() {
            return Err(bad("trailing bytes"));
        }
        Ok(Self { meta, model })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn check_vocab(&self, vocab_hash: &str) -> Result<()> {
        if self.meta.vocab_hash != vocab_hash {
            return Err(Error::Config(format!(
                "vocabulary hash mismatch: checkpoint {} vs vocabulary {}",
                self.meta.vocab_hash, vocab_hash
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sddloss::SddMode;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut cfg = ModelConfig::desk(20);
        cfg.hidden = 16;
        cfg.ff_dim = 8;
        let model = AdcModel::new(cfg, SddConfig::new(SddMode::Late, 1.0, 16), 3).unwrap();
        let ck = Checkpoint::new(model, "abc".into(), 4, 1.5, 3);
        let bytes = ck.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.meta, ck.meta);
        for id in ck.model.store.ids() {
            assert_eq!(ck.model.store.get(id), back.model.store.get(id));
        }
        assert_eq!(back.to_bytes().unwrap(), bytes);
        assert!(back.check_vocab("abd").is_err());
    }

    #[test]
    fn corrupt_bytes_are_rejected() {
        assert!(Checkpoint::from_bytes(b"ADCX0000000000000000").is_err());
        let model = AdcModel::new(ModelConfig::desk(20), SddConfig::off(), 1).unwrap();
        let mut bytes = Checkpoint::new(model, "h".into(), 0, 0.0, 1)
            .to_bytes()
            .unwrap();
        bytes.pop();
        assert!(Checkpoint::from_bytes(&bytes).is_err());
    }
}

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::diffmodel::{MaskMode, ModelConfig, PositionMode};
use crate::error::{Error, Result};
use crate::sddloss::{EarlySource, SddConfig, SddMode};

/// Everything a training or evaluation run needs. Every field can be set
/// from a `key = value` file or the command line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub val_fraction: f64,
    pub lambda: f64,
    pub sdd_mode: SddMode,
    pub mask: MaskMode,
    pub beam_width: usize,
    pub seed: u64,
    pub hidden: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub layers: usize,
    pub dropout: f64,
    pub temperature: f64,
    pub early_source: EarlySource,
    pub token_self_attention: bool,
    pub positions: PositionMode,
    /// Use only the first `n` development pairs; 0 means all.
    pub max_train_pairs: usize,
    /// Evaluate only the first `n` evaluation pairs; 0 means all.
    pub max_eval_pairs: usize,
    /// Stop after this many epochs without a validation improvement; 0 never stops early.
    pub patience: usize,
    /// Global gradient norm clip; 0 disables clipping.
    pub clip_norm: f64,
    /// Multiply the learning rate by `lr_decay` after every `lr_patience`
    /// epochs without a validation improvement; 0 keeps it constant.
    pub lr_patience: usize,
    pub lr_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            data_dir: PathBuf::from("data"),
            out_dir: PathBuf::from("runs"),
            epochs: 100,
            lr: 3e-3,
            batch_size: 16,
            val_fraction: 0.1,
            lambda: 0.0,
            sdd_mode: SddMode::Off,
            mask: MaskMode::CrossOnly,
            beam_width: 4,
            seed: 0,
            hidden: 64,
            heads: 4,
            ff_dim: 128,
            layers: 1,
            dropout: 0.1,
            temperature: SddConfig::DEFAULT_TEMPERATURE,
            early_source: EarlySource::Embeddings,
            token_self_attention: false,
            positions: PositionMode::Continuous,
            max_train_pairs: 0,
            max_eval_pairs: 0,
            patience: 0,
            clip_norm: 1.0,
            lr_patience: 3,
            lr_decay: 0.5,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("bad value {value:?} for {key}")))
}

pub fn parse_sdd_mode(s: &str) -> Result<SddMode> {
    match s {
        "off" | "none" => Ok(SddMode::Off),
        "early" => Ok(SddMode::Early),
        "late" => Ok(SddMode::Late),
        _ => Err(Error::Config(format!(
            "unknown SDD mode {s:?} (off, early, late)"
        ))),
    }
}

pub fn parse_mask(s: &str) -> Result<MaskMode> {
    match s {
        "cross_only" | "cross" => Ok(MaskMode::CrossOnly),
        "none" => Ok(MaskMode::None),
        _ => Err(Error::Config(format!(
            "unknown mask mode {s:?} (cross_only, none)"
        ))),
    }
}

pub fn mask_name(m: MaskMode) -> &'static str {
    match m {
        MaskMode::CrossOnly => "cross_only",
        MaskMode::None => "none",
    }
}

pub fn sdd_mode_name(m: SddMode) -> &'static str {
    match m {
        SddMode::Off => "off",
        SddMode::Early => "early",
        SddMode::Late => "late",
    }
}

/// `key = value` lines; blank lines and `#` comments are skipped.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
        out.push((k.trim().to_owned(), v.trim().to_owned()));
    }
    Ok(out)
}

impl TrainConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let k = key.replace('-', "_");
        match k.as_str() {
            "data_dir" => self.data_dir = PathBuf::from(value),
            "out_dir" => self.out_dir = PathBuf::from(value),
            "epochs" => self.epochs = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "val_fraction" => self.val_fraction = parse(key, value)?,
            "lambda" => self.lambda = parse(key, value)?,
            "sdd_mode" | "sdd" => self.sdd_mode = parse_sdd_mode(value)?,
            "mask" => self.mask = parse_mask(value)?,
            "beam_width" => self.beam_width = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "hidden" => self.hidden = parse(key, value)?,
            "heads" => self.heads = parse(key, value)?,
            "ff_dim" => self.ff_dim = parse(key, value)?,
            "layers" => self.layers = parse(key, value)?,
            "dropout" => self.dropout = parse(key, value)?,
            "temperature" => self.temperature = parse(key, value)?,
            "early_source" => {
                self.early_source = match value {
                    "embeddings" => EarlySource::Embeddings,
                    "positioned" => EarlySource::Positioned,
                    _ => return Err(Error::Config(format!("unknown early_source {value:?}"))),
                }
            }
            "token_self_attention" => self.token_self_attention = parse(key, value)?,
            "positions" => {
                self.positions = match value {
                    "continuous" => PositionMode::Continuous,
                    "restart" => PositionMode::Restart,
                    _ => return Err(Error::Config(format!("unknown positions {value:?}"))),
                }
            }
            "max_train_pairs" => self.max_train_pairs = parse(key, value)?,
            "max_eval_pairs" => self.max_eval_pairs = parse(key, value)?,
            "patience" => self.patience = parse(key, value)?,
            "clip_norm" => self.clip_norm = parse(key, value)?,
            "lr_patience" => self.lr_patience = parse(key, value)?,
            "lr_decay" => self.lr_decay = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    pub fn apply_kv(&mut self, text: &str) -> Result<()> {
        for (k, v) in parse_kv(text)? {
            self.set(&k, &v)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_kv(&text)
    }

    /// The effective configuration in file form.
    pub fn to_kv(&self) -> String {
        let pairs: Vec<(&str, String)> = vec![
            ("data_dir", self.data_dir.display().to_string()),
            ("out_dir", self.out_dir.display().to_string()),
            ("epochs", self.epochs.to_string()),
            ("lr", self.lr.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("val_fraction", self.val_fraction.to_string()),
            ("lambda", self.lambda.to_string()),
            ("sdd_mode", sdd_mode_name(self.sdd_mode).into()),
            ("mask", mask_name(self.mask).into()),
            ("beam_width", self.beam_width.to_string()),
            ("seed", self.seed.to_string()),
            ("hidden", self.hidden.to_string()),
            ("heads", self.heads.to_string()),
            ("ff_dim", self.ff_dim.to_string()),
            ("layers", self.layers.to_string()),
            ("dropout", self.dropout.to_string()),
            ("temperature", self.temperature.to_string()),
            (
                "early_source",
                match self.early_source {
                    EarlySource::Embeddings => "embeddings",
                    EarlySource::Positioned => "positioned",
                }
                .into(),
            ),
            (
                "token_self_attention",
                self.token_self_attention.to_string(),
            ),
            (
                "positions",
                match self.positions {
                    PositionMode::Continuous => "continuous",
                    PositionMode::Restart => "restart",
                }
                .into(),
            ),
            ("max_train_pairs", self.max_train_pairs.to_string()),
            ("max_eval_pairs", self.max_eval_pairs.to_string()),
            ("patience", self.patience.to_string()),
            ("clip_norm", self.clip_norm.to_string()),
            ("lr_patience", self.lr_patience.to_string()),
            ("lr_decay", self.lr_decay.to_string()),
        ];
        pairs.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::Config(format!(
                "val_fraction {} outside (0, 1)",
                self.val_fraction
            )));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 || self.beam_width == 0 {
            return Err(Error::Config(
                "batch_size and beam_width must be at least 1".into(),
            ));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate {} must be positive",
                self.lr
            )));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::Config(format!(
                "lr_decay {} outside (0, 1]",
                self.lr_decay
            )));
        }
        self.sdd_config().validate()?;
        Ok(())
    }

    pub fn sdd_config(&self) -> SddConfig {
        SddConfig {
            temperature: self.temperature,
            early_source: self.early_source,
            ..SddConfig::new(self.sdd_mode, self.lambda, self.hidden)
        }
    }

    pub fn model_config(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            hidden: self.hidden,
            heads: self.heads,
            encoder_layers: self.layers,
            decoder_layers: self.layers,
            ff_dim: self.ff_dim,
            dropout: self.dropout,
            mask: self.mask,
            token_self_attention: self.token_self_attention,
            positions: self.positions,
            ..ModelConfig::desk(vocab_size)
        }
    }
}

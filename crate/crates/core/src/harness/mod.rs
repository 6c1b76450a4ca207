//! Training, evaluation, ablation and attention export on top of the model,
//! the synthetic data and the metrics.

pub mod attention;
pub mod checkpoint;
pub mod config;
pub mod evaluate;
pub mod report;
pub mod train;

use std::fs;
use std::path::{Path, PathBuf};

pub use attention::{attention_maps, event_focus, export_attention, opposite_block_mass};
pub use checkpoint::Checkpoint;
pub use config::TrainConfig;
pub use evaluate::{decode_pairs, score, Decoded, Scores};
pub use report::{Report, ReportRow};
pub use train::{
    loss_vars, mean_loss, prepare, train, EpochLog, LossValues, PreparedPair, TrainOutcome,
};

use crate::diffmodel::MaskMode;
use crate::error::{Error, Result};
use crate::pairsynth::dataset::{manifest_name, VOCAB_FILE};
use crate::pairsynth::{load_manifest, Split, Vocabulary};
use crate::sddloss::SddMode;

/// One configuration of the ablation grid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridRow {
    pub id: &'static str,
    pub system: &'static str,
    pub mask: MaskMode,
    pub sdd: SddMode,
    pub lambda: f64,
}

/// Rows (a)–(h): plain transformer, cross-attention mask, then early and
/// late disentanglement at λ ∈ {0.5, 1.0, 2.0}.
pub fn ablation_grid() -> [GridRow; 8] {
    let row = |id, system, mask, sdd, lambda| GridRow {
        id,
        system,
        mask,
        sdd,
        lambda,
    };
    [
        row("(a)", "baseline", MaskMode::None, SddMode::Off, 0.0),
        row(
            "(b)",
            "cross-attention mask",
            MaskMode::CrossOnly,
            SddMode::Off,
            0.0,
        ),
        row(
            "(c)",
            "+ early SDD",
            MaskMode::CrossOnly,
            SddMode::Early,
            0.5,
        ),
        row(
            "(d)",
            "+ early SDD",
            MaskMode::CrossOnly,
            SddMode::Early,
            1.0,
        ),
        row(
            "(e)",
            "+ early SDD",
            MaskMode::CrossOnly,
            SddMode::Early,
            2.0,
        ),
        row("(f)", "+ late SDD", MaskMode::CrossOnly, SddMode::Late, 0.5),
        row("(g)", "+ late SDD", MaskMode::CrossOnly, SddMode::Late, 1.0),
        row("(h)", "+ late SDD", MaskMode::CrossOnly, SddMode::Late, 2.0),
    ]
}

impl GridRow {
    pub fn apply(&self, cfg: &TrainConfig) -> TrainConfig {
        TrainConfig {
            mask: self.mask,
            sdd_mode: self.sdd,
            lambda: self.lambda,
            ..cfg.clone()
        }
    }
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_vocab(cfg: &TrainConfig) -> Result<Vocabulary> {
    Vocabulary::load(&cfg.data_dir.join(VOCAB_FILE))
}

/// Loads and tokenizes one split, honouring the pair limits.
pub fn load_split(
    cfg: &TrainConfig,
    split: Split,
    vocab: &Vocabulary,
) -> Result<Vec<PreparedPair>> {
    let mut pairs = load_manifest(&cfg.data_dir.join(manifest_name(split)))?;
    let limit = match split {
        Split::Dev => cfg.max_train_pairs,
        Split::Eval => cfg.max_eval_pairs,
    };
    if limit > 0 {
        pairs.truncate(limit);
    }
    Ok(prepare(pairs, vocab))
}

/// Effective configuration as JSON, with extra keys appended.
pub fn config_json(cfg: &TrainConfig, extra: &[(&str, serde_json::Value)]) -> serde_json::Value {
    let mut v = serde_json::to_value(cfg).expect("config serializes");
    if let Some(map) = v.as_object_mut() {
        for (k, x) in extra {
            map.insert((*k).to_owned(), x.clone());
        }
    }
    v
}

pub const CHECKPOINT_FILE: &str = "checkpoint.adck";
pub const TRAIN_LOG_FILE: &str = "train_log.jsonl";

/// Trains on the development split and writes the best checkpoint, the
/// per-epoch log and the effective configuration into `out_dir`.
pub fn run_train(cfg: &TrainConfig, on_epoch: &mut dyn FnMut(&EpochLog)) -> Result<TrainOutcome> {
    let vocab = load_vocab(cfg)?;
    let dev = load_split(cfg, Split::Dev, &vocab)?;
    fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    let outcome = train(cfg, &dev, &vocab, &mut |e| {
        on_epoch(e);
        true
    })?;
    outcome.best.save(&cfg.out_dir.join(CHECKPOINT_FILE))?;
    let mut log = String::new();
    for e in &outcome.log {
        log.push_str(&serde_json::to_string(e)?);
        log.push('\n');
    }
    write(&cfg.out_dir.join(TRAIN_LOG_FILE), log)?;
    write(&cfg.out_dir.join("config.txt"), cfg.to_kv())?;
    Ok(outcome)
}

/// Decodes and scores the evaluation split with a checkpoint, writing
/// `report.json`, `report.txt` and `captions.jsonl` into `out_dir`.
pub fn run_eval(cfg: &TrainConfig, checkpoint: &Path, force_reference: bool) -> Result<Report> {
    let vocab = load_vocab(cfg)?;
    let ck = Checkpoint::load(checkpoint)?;
    ck.check_vocab(&vocab.hash())?;
    let eval = load_split(cfg, Split::Eval, &vocab)?;
    let decoded = decode_pairs(&ck.model, &vocab, &eval, cfg.beam_width, force_reference)?;
    let scores = score(&decoded)?;
    let model = &ck.model;
    let report = Report {
        config: config_json(
            cfg,
            &[
                (
                    "checkpoint",
                    serde_json::json!(checkpoint.display().to_string()),
                ),
                ("checkpoint_mask", serde_json::to_value(model.config.mask)?),
                ("checkpoint_sdd", serde_json::to_value(&model.sdd)?),
                ("force_reference", serde_json::json!(force_reference)),
                ("metrics_note", serde_json::json!(report::CIDER_NOTE)),
            ],
        ),
        rows: vec![ReportRow::new(
            "eval",
            model.config.mask,
            model.sdd.mode,
            model.sdd.lambda,
            &scores,
        )],
    };
    fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    write(&cfg.out_dir.join("report.json"), report.to_json())?;
    write(&cfg.out_dir.join("report.txt"), report.to_text())?;
    let mut caps = String::new();
    for d in &decoded {
        caps.push_str(&serde_json::to_string(d)?);
        caps.push('\n');
    }
    write(&cfg.out_dir.join("captions.jsonl"), caps)?;
    Ok(report)
}

/// Scores a captions file of `{id, candidate, references}` lines and
/// writes `report.json` and `report.txt` into `out_dir`.
pub fn run_score(cfg: &TrainConfig, captions: &Path) -> Result<Report> {
    let text = fs::read_to_string(captions).map_err(|e| Error::io(captions, e))?;
    let decoded: Vec<Decoded> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect::<std::result::Result<_, _>>()?;
    let scores = score(&decoded)?;
    let report = Report {
        config: config_json(
            cfg,
            &[
                (
                    "captions",
                    serde_json::json!(captions.display().to_string()),
                ),
                ("metrics_note", serde_json::json!(report::CIDER_NOTE)),
            ],
        ),
        rows: vec![ReportRow {
            mask: "n/a".into(),
            disent: "n/a".into(),
            lambda: 0.0,
            ..ReportRow::new("captions", MaskMode::None, SddMode::Off, 0.0, &scores)
        }],
    };
    fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    write(&cfg.out_dir.join("report.json"), report.to_json())?;
    write(&cfg.out_dir.join("report.txt"), report.to_text())?;
    Ok(report)
}

#[derive(Clone, Debug)]
pub struct AblationRun {
    pub row: GridRow,
    pub seed: u64,
    pub scores: Scores,
    pub best_epoch: usize,
    pub checkpoint: Checkpoint,
}

#[derive(Clone, Debug)]
pub struct AblationResult {
    /// One row per grid entry, scores averaged over seeds.
    pub report: Report,
    pub runs: Vec<AblationRun>,
}

impl AblationResult {
    pub fn row_scores(&self, id: &str) -> Vec<Scores> {
        self.runs
            .iter()
            .filter(|r| r.row.id == id)
            .map(|r| r.scores)
            .collect()
    }
}

/// Trains and evaluates every grid row for seeds `cfg.seed .. cfg.seed + n_seeds`.
/// Writes `ablation.json`, `ablation.txt` and `ablation_runs.jsonl`.
pub fn run_ablation(
    cfg: &TrainConfig,
    n_seeds: usize,
    progress: &mut dyn FnMut(&GridRow, u64, &Scores),
) -> Result<AblationResult> {
    if n_seeds == 0 {
        return Err(Error::Config("at least one seed is required".into()));
    }
    let vocab = load_vocab(cfg)?;
    let dev = load_split(cfg, Split::Dev, &vocab)?;
    let eval = load_split(cfg, Split::Eval, &vocab)?;
    let mut runs = Vec::new();
    let mut rows = Vec::new();
    for row in ablation_grid() {
        let mut per_seed = Vec::with_capacity(n_seeds);
        for k in 0..n_seeds as u64 {
            let seed = cfg.seed + k;
            let run_cfg = TrainConfig {
                seed,
                ..row.apply(cfg)
            };
            let outcome = train(&run_cfg, &dev, &vocab, &mut |_| true)?;
            let decoded = decode_pairs(&outcome.best.model, &vocab, &eval, cfg.beam_width, false)?;
            let scores = score(&decoded)?;
            progress(&row, seed, &scores);
            per_seed.push(scores);
            runs.push(AblationRun {
                row,
                seed,
                scores,
                best_epoch: outcome.best.meta.epoch,
                checkpoint: outcome.best,
            });
        }
        rows.push(ReportRow::new(
            row.id,
            row.mask,
            row.sdd,
            row.lambda,
            &Scores::mean(&per_seed),
        ));
    }
    let report = Report {
        config: config_json(
            cfg,
            &[
                ("seeds", serde_json::json!(n_seeds)),
                ("metrics_note", serde_json::json!(report::CIDER_NOTE)),
            ],
        ),
        rows,
    };
    fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    write(&cfg.out_dir.join("ablation.json"), report.to_json())?;
    write(&cfg.out_dir.join("ablation.txt"), report.to_text())?;
    let mut lines = String::new();
    for r in &runs {
        let v = serde_json::json!({
            "id": r.row.id,
            "seed": r.seed,
            "best_epoch": r.best_epoch,
            "scores": r.scores,
        });
        lines.push_str(&v.to_string());
        lines.push('\n');
    }
    write(&cfg.out_dir.join("ablation_runs.jsonl"), lines)?;
    Ok(AblationResult { report, runs })
}

/// Exports attention maps of one pair (searched in both splits).
pub fn run_attn_viz(cfg: &TrainConfig, checkpoint: &Path, pair_id: &str) -> Result<Vec<PathBuf>> {
    let vocab = load_vocab(cfg)?;
    let ck = Checkpoint::load(checkpoint)?;
    ck.check_vocab(&vocab.hash())?;
    for split in [Split::Eval, Split::Dev] {
        let pairs = load_manifest(&cfg.data_dir.join(manifest_name(split)))?;
        if let Some(p) = pairs.into_iter().find(|p| p.id == pair_id) {
            let prepared = prepare(vec![p], &vocab);
            return export_attention(&ck.model, &prepared[0], &cfg.out_dir);
        }
    }
    Err(Error::Invalid(format!("unknown pair id {pair_id:?}")))
}

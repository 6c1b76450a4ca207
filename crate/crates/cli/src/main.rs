use std::path::PathBuf;

use adc_core::harness::{self, TrainConfig};
use adc_core::pairsynth::{build_dataset, DatasetConfig};
use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "adc",
    version,
    about = "Audio difference captioning experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic development and evaluation sets.
    GenData {
        #[arg(long, default_value = "data")]
        out: PathBuf,
        #[arg(long, default_value_t = 2000)]
        n_dev: usize,
        #[arg(long, default_value_t = 400)]
        n_eval: usize,
        #[arg(long, env = "ADC_SEED", default_value_t = 0)]
        seed: u64,
    },
    /// Train a model and save the best-validation checkpoint.
    Train(RunArgs),
    /// Decode the evaluation set with a checkpoint and write a score report,
    /// or score an existing captions file.
    Eval {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, required_unless_present = "captions")]
        checkpoint: Option<PathBuf>,
        /// JSON lines of `{id, candidate, references}` to score instead of decoding.
        #[arg(long, conflicts_with = "checkpoint")]
        captions: Option<PathBuf>,
        /// Score the first reference of every pair instead of decoding.
        #[arg(long)]
        force_reference: bool,
    },
    /// Train and evaluate the eight-row ablation grid.
    Ablate {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value_t = 3)]
        seeds: usize,
    },
    /// Export encoder attention maps of one pair.
    AttnViz {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        pair: String,
    },
}

/// Flags override the config file, which overrides the defaults.
#[derive(Args)]
struct RunArgs {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    val_fraction: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    /// off, early or late
    #[arg(long)]
    sdd_mode: Option<String>,
    /// cross_only or none
    #[arg(long)]
    mask: Option<String>,
    #[arg(long)]
    beam_width: Option<usize>,
    #[arg(long, env = "ADC_SEED")]
    seed: Option<u64>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    ff_dim: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    temperature: Option<f64>,
    /// embeddings or positioned
    #[arg(long)]
    early_source: Option<String>,
    #[arg(long)]
    token_self_attention: Option<bool>,
    /// continuous or restart
    #[arg(long)]
    positions: Option<String>,
    #[arg(long)]
    max_train_pairs: Option<usize>,
    #[arg(long)]
    max_eval_pairs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    clip_norm: Option<f64>,
    /// Epochs without improvement before the learning rate is decayed; 0 never decays.
    #[arg(long)]
    lr_patience: Option<usize>,
    #[arg(long)]
    lr_decay: Option<f64>,
}

fn text<T: ToString>(v: &Option<T>) -> Option<String> {
    v.as_ref().map(ToString::to_string)
}

fn path(v: &Option<PathBuf>) -> Option<String> {
    v.as_ref().map(|p| p.display().to_string())
}

impl RunArgs {
    fn overrides(&self) -> Vec<(&'static str, Option<String>)> {
        vec![
            ("data_dir", path(&self.data_dir)),
            ("out_dir", path(&self.out_dir)),
            ("epochs", text(&self.epochs)),
            ("lr", text(&self.lr)),
            ("batch_size", text(&self.batch_size)),
            ("val_fraction", text(&self.val_fraction)),
            ("lambda", text(&self.lambda)),
            ("sdd_mode", self.sdd_mode.clone()),
            ("mask", self.mask.clone()),
            ("beam_width", text(&self.beam_width)),
            ("seed", text(&self.seed)),
            ("hidden", text(&self.hidden)),
            ("heads", text(&self.heads)),
            ("ff_dim", text(&self.ff_dim)),
            ("layers", text(&self.layers)),
            ("dropout", text(&self.dropout)),
            ("temperature", text(&self.temperature)),
            ("early_source", self.early_source.clone()),
            ("token_self_attention", text(&self.token_self_attention)),
            ("positions", self.positions.clone()),
            ("max_train_pairs", text(&self.max_train_pairs)),
            ("max_eval_pairs", text(&self.max_eval_pairs)),
            ("patience", text(&self.patience)),
            ("clip_norm", text(&self.clip_norm)),
            ("lr_patience", text(&self.lr_patience)),
            ("lr_decay", text(&self.lr_decay)),
        ]
    }

    fn resolve(&self) -> Result<TrainConfig> {
        let mut cfg = TrainConfig::default();
        if let Some(file) = &self.config {
            cfg.apply_file(file)?;
        }
        for (key, value) in self.overrides() {
            if let Some(v) = value {
                cfg.set(key, &v)?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::GenData {
            out,
            n_dev,
            n_eval,
            seed,
        } => {
            let cfg = DatasetConfig {
                n_dev,
                n_eval,
                seed,
                ..Default::default()
            };
            let paths = build_dataset(&out, &cfg)
                .with_context(|| format!("writing dataset to {}", out.display()))?;
            println!(
                "wrote {} ({n_dev} pairs), {} ({n_eval} pairs), {}",
                paths.dev_manifest.display(),
                paths.eval_manifest.display(),
                paths.vocab.display()
            );
        }
        Command::Train(run) => {
            let cfg = run.resolve()?;
            print!("{}", cfg.to_kv());
            let outcome = harness::run_train(&cfg, &mut |e| {
                println!(
                    "epoch {:3}  ce {:.4}  l_s {:.4}  l_d {:.4}  loss {:.4}  val_ce {:.4}",
                    e.epoch,
                    e.train.ce,
                    e.train.similar,
                    e.train.discrepant,
                    e.train.total,
                    e.val_ce
                );
            })?;
            println!(
                "best epoch {} (val_ce {:.4}) saved to {}",
                outcome.best.meta.epoch,
                outcome.best.meta.best_val_loss,
                cfg.out_dir.join(harness::CHECKPOINT_FILE).display()
            );
        }
        Command::Eval {
            run,
            checkpoint,
            captions,
            force_reference,
        } => {
            let cfg = run.resolve()?;
            let report = match (checkpoint, captions) {
                (Some(ck), _) => harness::run_eval(&cfg, &ck, force_reference)?,
                (None, Some(caps)) => harness::run_score(&cfg, &caps)?,
                (None, None) => unreachable!("clap requires one of the two"),
            };
            print!("{}", report.to_text());
        }
        Command::Ablate { run, seeds } => {
            let cfg = run.resolve()?;
            let result = harness::run_ablation(&cfg, seeds, &mut |row, seed, s| {
                println!(
                    "{} seed {seed}: BLEU-4 {:.1}  CIDEr {:.1}  exact {:.1}",
                    row.id, s.bleu4, s.cider, s.exact_match
                );
            })?;
            print!("{}", result.report.to_text());
        }
        Command::AttnViz {
            run,
            checkpoint,
            pair,
        } => {
            let cfg = run.resolve()?;
            for p in harness::run_attn_viz(&cfg, &checkpoint, &pair)? {
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}

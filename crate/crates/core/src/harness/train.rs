use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffmodel::AdcModel;
use crate::error::{Error, Result};
use crate::harness::checkpoint::Checkpoint;
use crate::harness::config::TrainConfig;
use crate::numcore::{Adam, BlockBounds, Graph, ParamStore, Tensor, Var};
use crate::pairsynth::{LoadedPair, PairSpec, Vocabulary};
use crate::sddloss::{sdd_loss_var, EarlySource, SddMode};

/// A pair with tokenized captions, ready for the model.
#[derive(Clone, Debug)]
pub struct PreparedPair {
    pub id: String,
    pub x: Tensor,
    pub y: Tensor,
    pub captions: Vec<String>,
    /// `[bos, .., eos]` per caption.
    pub tokens: Vec<Vec<usize>>,
    pub spec: PairSpec,
}

pub fn prepare(pairs: Vec<LoadedPair>, vocab: &Vocabulary) -> Vec<PreparedPair> {
    pairs
        .into_iter()
        .map(|p| PreparedPair {
            tokens: p.captions.iter().map(|c| vocab.tokenize(c)).collect(),
            id: p.id,
            x: p.features_x,
            y: p.features_y,
            captions: p.captions,
            spec: p.spec,
        })
        .collect()
}

/// Graph handles of the training objective on one batch.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    /// Mean per-token cross-entropy over every caption of the batch.
    pub ce: Var,
    pub similar: Option<Var>,
    pub discrepant: Option<Var>,
    /// `ce + λ·(similar + discrepant)`.
    pub total: Var,
}

/// Builds `L = L_CE + λ·L_SDD` for a batch on `g`.
pub fn loss_vars(model: &AdcModel, g: &mut Graph, batch: &[&PreparedPair]) -> Result<LossVars> {
    if batch.is_empty() {
        return Err(Error::Invalid("empty batch".into()));
    }
    let mut ce_terms = Vec::with_capacity(batch.len());
    let mut n_tokens = 0usize;
    let mut sdd_inputs: Vec<(Var, BlockBounds)> = Vec::with_capacity(batch.len());
    for pair in batch {
        let (x, y) = (g.constant(pair.x.clone()), g.constant(pair.y.clone()));
        let enc = model.encode(g, x, y)?;
        let memory = model.decoder_memory(g, enc.z_hat)?;
        for ids in &pair.tokens {
            if ids.len() < 2 {
                return Err(Error::EmptySequence);
            }
            let logits = model.decode_logits(g, &memory, &ids[..ids.len() - 1])?;
            ce_terms.push(g.cross_entropy_sum(logits, &ids[1..])?);
            n_tokens += ids.len() - 1;
        }
        let source = match (model.sdd.mode, model.sdd.early_source) {
            (SddMode::Off, _) => None,
            (SddMode::Early, EarlySource::Embeddings) => Some(enc.z),
            (SddMode::Early, EarlySource::Positioned) => Some(enc.z_pos),
            (SddMode::Late, _) => Some(enc.z_hat),
        };
        if let Some(z) = source {
            sdd_inputs.push((z, enc.bounds));
        }
    }
    let mut ce_sum = ce_terms[0];
    for &t in &ce_terms[1..] {
        ce_sum = g.add(ce_sum, t)?;
    }
    let ce = g.scale(ce_sum, 1.0 / n_tokens as f64);
    match &model.sdd_heads {
        Some(heads) if !sdd_inputs.is_empty() => {
            let terms = sdd_loss_var(g, heads, &sdd_inputs, &model.sdd)?;
            let weighted = g.scale(terms.total, model.sdd.lambda);
            let total = g.add(ce, weighted)?;
            Ok(LossVars {
                ce,
                similar: Some(terms.similar),
                discrepant: Some(terms.discrepant),
                total,
            })
        }
        _ => Ok(LossVars {
            ce,
            similar: None,
            discrepant: None,
            total: ce,
        }),
    }
}

/// Plain loss values.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossValues {
    pub ce: f64,
    pub similar: f64,
    pub discrepant: f64,
    pub total: f64,
}

impl LossValues {
    fn read(g: &Graph, v: &LossVars) -> Self {
        let s = |x: Option<Var>| x.map_or(0.0, |x| g.value(x).data()[0]);
        Self {
            ce: g.value(v.ce).data()[0],
            similar: s(v.similar),
            discrepant: s(v.discrepant),
            total: g.value(v.total).data()[0],
        }
    }

    fn add_scaled(&mut self, o: &Self, w: f64) {
        self.ce += w * o.ce;
        self.similar += w * o.similar;
        self.discrepant += w * o.discrepant;
        self.total += w * o.total;
    }
}

/// Evaluation-mode losses averaged over consecutive batches of `batch_size`.
pub fn mean_loss(
    model: &AdcModel,
    pairs: &[PreparedPair],
    batch_size: usize,
) -> Result<LossValues> {
    let mut acc = LossValues::default();
    let refs: Vec<&PreparedPair> = pairs.iter().collect();
    let n_batches = refs.chunks(batch_size.max(1)).count();
    for batch in refs.chunks(batch_size.max(1)) {
        let mut g = Graph::new(&model.store);
        let v = loss_vars(model, &mut g, batch)?;
        acc.add_scaled(&LossValues::read(&g, &v), 1.0 / n_batches as f64);
    }
    Ok(acc)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Training-mode losses averaged over the epoch's batches.
    pub train: LossValues,
    /// Validation cross-entropy in evaluation mode.
    pub val_ce: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters of the epoch with the lowest validation cross-entropy.
    pub best: Checkpoint,
    /// Parameters after the last epoch.
    pub last: AdcModel,
    pub log: Vec<EpochLog>,
    pub train_ids: Vec<String>,
    pub val_ids: Vec<String>,
}

fn seed_mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(0x632B_E59B_D9B4_E019);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seeded split of `n` items into (train, validation) index lists.
pub fn split_indices(n: usize, val_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    let n_val = ((n as f64 * val_fraction).round() as usize).max(1);
    if n_val >= n {
        return Err(Error::Config(format!(
            "{n} pairs cannot be split with validation fraction {val_fraction}"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed_mix(seed, 1)));
    let val = idx.split_off(n - n_val);
    Ok((idx, val))
}

fn clip_gradients(grads: &mut [Option<Tensor>], max_norm: f64) {
    let norm = grads
        .iter()
        .flatten()
        .flat_map(|g| g.data())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut().flatten() {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
}

/// Called after every epoch; returning `false` stops training.
pub type EpochHook<'a> = dyn FnMut(&EpochLog) -> bool + 'a;

/// Trains a fresh model on `pairs` (development set; a seeded validation
/// split is held out). Deterministic for a fixed configuration.
pub fn train(
    cfg: &TrainConfig,
    pairs: &[PreparedPair],
    vocab: &Vocabulary,
    on_epoch: &mut EpochHook<'_>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let (train_idx, val_idx) = split_indices(pairs.len(), cfg.val_fraction, cfg.seed)?;
    let train_set: Vec<&PreparedPair> = train_idx.iter().map(|&i| &pairs[i]).collect();
    let val_set: Vec<PreparedPair> = val_idx.iter().map(|&i| pairs[i].clone()).collect();
    let init_seed = seed_mix(cfg.seed, 2);
    let mut model = AdcModel::new(cfg.model_config(vocab.len()), cfg.sdd_config(), init_seed)?;
    let mut adam = Adam::new(&model.store, cfg.lr);
    let mut order_rng = ChaCha8Rng::seed_from_u64(seed_mix(cfg.seed, 3));
    let mut best: Option<(f64, usize, ParamStore)> = None;
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut step = 0u64;
    let mut since_best = 0usize;
    for epoch in 1..=cfg.epochs {
        let mut order = train_set.clone();
        order.shuffle(&mut order_rng);
        let n_batches = order.chunks(cfg.batch_size).count();
        let mut epoch_loss = LossValues::default();
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            step += 1;
            let mut grads = {
                let mut g = Graph::with_mode(&model.store, true, seed_mix(cfg.seed, 1000 + step));
                let v = loss_vars(&model, &mut g, batch)?;
                let vals = LossValues::read(&g, &v);
                if !vals.total.is_finite() {
                    let ids: Vec<&str> = batch.iter().map(|p| p.id.as_str()).collect();
                    return Err(Error::NonFinite(format!(
                        "training loss at epoch {epoch}, batch {b} (pairs {})",
                        ids.join(", ")
                    )));
                }
                epoch_loss.add_scaled(&vals, 1.0 / n_batches as f64);
                g.backward(v.total)?;
                g.param_grads()
            };
            if cfg.clip_norm > 0.0 {
                clip_gradients(&mut grads, cfg.clip_norm);
            }
            adam.step(&mut model.store, &grads)?;
        }
        let val_ce = mean_loss(&model, &val_set, cfg.batch_size)?.ce;
        let entry = EpochLog {
            epoch,
            train: epoch_loss,
            val_ce,
        };
        let improved = best.as_ref().is_none_or(|(b, _, _)| val_ce < *b);
        if improved {
            best = Some((val_ce, epoch, model.store.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if cfg.lr_patience > 0 && since_best.is_multiple_of(cfg.lr_patience) {
                adam.lr *= cfg.lr_decay;
            }
        }
        let keep_going = on_epoch(&entry);
        log.push(entry);
        if !keep_going || (cfg.patience > 0 && since_best >= cfg.patience) {
            break;
        }
    }
    let (best_val, best_epoch, best_store) = best.expect("at least one epoch ran");
    let mut best_model = model.clone();
    best_model.store = best_store;
    Ok(TrainOutcome {
        best: Checkpoint::new(best_model, vocab.hash(), best_epoch, best_val, init_seed),
        last: model,
        log,
        train_ids: train_set.iter().map(|p| p.id.clone()).collect(),
        val_ids: val_set.iter().map(|p| p.id.clone()).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_is_disjoint_and_seeded() {
        let (t, v) = split_indices(50, 0.1, 4).unwrap();
        assert_eq!((t.len(), v.len()), (45, 5));
        assert!(v.iter().all(|i| !t.contains(i)));
        assert_eq!(split_indices(50, 0.1, 4).unwrap(), (t, v));
        assert!(split_indices(1, 0.1, 0).is_err());
    }

    #[test]
    fn clipping_bounds_the_norm() {
        let mut g = vec![
            Some(Tensor::full(&[2], 3.0)),
            None,
            Some(Tensor::full(&[1], 4.0)),
        ];
        clip_gradients(&mut g, 1.0);
        let n: f64 = g
            .iter()
            .flatten()
            .flat_map(|t| t.data())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt();
        assert!((n - 1.0).abs() < 1e-12);
    }
}

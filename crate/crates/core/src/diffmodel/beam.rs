//! Beam search over any next-token scorer.
//!
//! Alive hypotheses are pruned by cumulative log-probability; a hypothesis
//! is finished when it emits end-of-sequence or reaches `max_len` tokens.
//! The winner is the finished hypothesis with the highest length-normalized
//! score. Ties are always broken by token ids in ascending order.

use std::cmp::Ordering;

use crate::diffmodel::model::{AdcModel, DecoderMemory};
use crate::error::{Error, Result};
use crate::numcore::{Graph, Tensor};
use crate::pairsynth::{BOS, EOS, PAD, UNK};

pub trait StepScorer {
    /// Log-probabilities of every vocabulary entry following `prefix`
    /// (generated tokens only, without the begin token).
    fn next_log_probs(&mut self, prefix: &[usize]) -> Result<Vec<f64>>;
}

#[derive(Clone, Debug)]
pub struct BeamConfig {
    pub width: usize,
    pub max_len: usize,
    pub eos: usize,
    /// Tokens never generated.
    pub banned: Vec<usize>,
}

impl BeamConfig {
    /// Caption decoding: padding, begin and unknown tokens are never emitted.
    pub fn captions(width: usize, max_len: usize) -> Self {
        Self {
            width,
            max_len,
            eos: EOS,
            banned: vec![PAD, BOS, UNK],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    /// Generated tokens, including the final end-of-sequence when present.
    pub token_ids: Vec<usize>,
    pub log_prob: f64,
    pub finished: bool,
}

impl Hypothesis {
    pub fn normalized_score(&self) -> f64 {
        self.log_prob / self.token_ids.len().max(1) as f64
    }

    /// Tokens without the trailing end-of-sequence.
    pub fn words(&self, eos: usize) -> &[usize] {
        match self.token_ids.split_last() {
            Some((&last, rest)) if last == eos => rest,
            _ => &self.token_ids,
        }
    }
}

fn by_score_then_tokens(
    a: &Hypothesis,
    b: &Hypothesis,
    score: impl Fn(&Hypothesis) -> f64,
) -> Ordering {
    score(b)
        .total_cmp(&score(a))
        .then_with(|| a.token_ids.cmp(&b.token_ids))
}

pub fn beam_search<S: StepScorer + ?Sized>(scorer: &mut S, cfg: &BeamConfig) -> Result<Hypothesis> {
    if cfg.width == 0 {
        return Err(Error::Config("beam width must be at least 1".into()));
    }
    if cfg.max_len == 0 {
        return Err(Error::Config("max_len must be at least 1".into()));
    }
    let mut alive = vec![Hypothesis {
        token_ids: Vec::new(),
        log_prob: 0.0,
        finished: false,
    }];
    let mut finished: Vec<Hypothesis> = Vec::new();
    while !alive.is_empty() {
        let mut candidates = Vec::with_capacity(alive.len() * 8);
        for hyp in &alive {
            let log_probs = scorer.next_log_probs(&hyp.token_ids)?;
            for (tok, &lp) in log_probs.iter().enumerate() {
                if cfg.banned.contains(&tok) || lp == f64::NEG_INFINITY {
                    continue;
                }
                let mut token_ids = hyp.token_ids.clone();
                token_ids.push(tok);
                let done = tok == cfg.eos || token_ids.len() >= cfg.max_len;
                candidates.push(Hypothesis {
                    token_ids,
                    log_prob: hyp.log_prob + lp,
                    finished: done,
                });
            }
        }
        if candidates.is_empty() {
            return Err(Error::Invalid("every token is banned".into()));
        }
        candidates.sort_by(|a, b| by_score_then_tokens(a, b, |h| h.log_prob));
        candidates.truncate(cfg.width);
        alive.clear();
        for c in candidates {
            if c.finished {
                finished.push(c);
            } else {
                alive.push(c);
            }
        }
    }
    finished.sort_by(|a, b| by_score_then_tokens(a, b, Hypothesis::normalized_score));
    Ok(finished.swap_remove(0))
}

/// Argmax decoding with the same banned set and tie rule as [`beam_search`].
pub fn greedy_decode<S: StepScorer + ?Sized>(
    scorer: &mut S,
    cfg: &BeamConfig,
) -> Result<Hypothesis> {
    let mut hyp = Hypothesis {
        token_ids: Vec::new(),
        log_prob: 0.0,
        finished: false,
    };
    while !hyp.finished {
        let log_probs = scorer.next_log_probs(&hyp.token_ids)?;
        let (tok, lp) = log_probs
            .iter()
            .enumerate()
            .filter(|(t, _)| !cfg.banned.contains(t))
            .fold(None::<(usize, f64)>, |best, (t, &lp)| match best {
                Some((_, b)) if b >= lp => best,
                _ => Some((t, lp)),
            })
            .ok_or_else(|| Error::Invalid("every token is banned".into()))?;
        hyp.token_ids.push(tok);
        hyp.log_prob += lp;
        hyp.finished = tok == cfg.eos || hyp.token_ids.len() >= cfg.max_len;
    }
    Ok(hyp)
}

/// Next-token scorer backed by a model and a fixed encoder output.
pub struct ModelScorer<'a> {
    model: &'a AdcModel,
    graph: Graph<'a>,
    memory: DecoderMemory,
}

impl<'a> ModelScorer<'a> {
    pub fn new(model: &'a AdcModel, z_hat: &Tensor) -> Result<Self> {
        let mut graph = Graph::new(&model.store);
        let z = graph.constant(z_hat.clone());
        let memory = model.decoder_memory(&mut graph, z)?;
        Ok(Self {
            model,
            graph,
            memory,
        })
    }
}

impl StepScorer for ModelScorer<'_> {
    fn next_log_probs(&mut self, prefix: &[usize]) -> Result<Vec<f64>> {
        let mut tokens = Vec::with_capacity(prefix.len() + 1);
        tokens.push(BOS);
        tokens.extend_from_slice(prefix);
        let logits = self
            .model
            .decode_logits(&mut self.graph, &self.memory, &tokens)?;
        let t = self.graph.value(logits);
        let row = t.row(t.rows() - 1);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        Ok(row.iter().map(|v| v - lse).collect())
    }
}

impl AdcModel {
    pub fn beam_search_decode(&self, z_hat: &Tensor, beam_width: usize) -> Result<Hypothesis> {
        let mut scorer = ModelScorer::new(self, z_hat)?;
        beam_search(
            &mut scorer,
            &BeamConfig::captions(beam_width, self.config.max_caption_len),
        )
    }

    pub fn greedy_decode(&self, z_hat: &Tensor) -> Result<Hypothesis> {
        let mut scorer = ModelScorer::new(self, z_hat)?;
        greedy_decode(
            &mut scorer,
            &BeamConfig::captions(1, self.config.max_caption_len),
        )
    }
}

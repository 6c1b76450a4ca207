//! Corpus-level caption metrics over multi-reference sets: BLEU, ROUGE-L and
//! CIDEr-D.
//!
//! All metrics compare tokens by identity only. CIDEr-D is returned without
//! the customary factor of 10; callers that print percentages multiply by
//! 100. Maps are ordered so that floating-point sums are reproducible.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};

pub const ROUGE_BETA: f64 = 1.2;
pub const CIDER_SIGMA: f64 = 6.0;
pub const CIDER_MAX_N: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct EvalItem<T> {
    pub candidate: Vec<T>,
    pub references: Vec<Vec<T>>,
}

impl<T> EvalItem<T> {
    pub fn new(candidate: Vec<T>, references: Vec<Vec<T>>) -> Self {
        Self {
            candidate,
            references,
        }
    }
}

/// Splits each string on whitespace.
pub fn item_from_strs(candidate: &str, references: &[&str]) -> EvalItem<String> {
    let split = |s: &str| s.split_whitespace().map(str::to_owned).collect::<Vec<_>>();
    EvalItem::new(
        split(candidate),
        references.iter().map(|r| split(r)).collect(),
    )
}

fn check_refs<T>(corpus: &[EvalItem<T>]) -> Result<()> {
    if corpus.is_empty() {
        return Err(Error::Invalid("empty corpus".into()));
    }
    if let Some(i) = corpus.iter().position(|it| it.references.is_empty()) {
        return Err(Error::Invalid(format!("item {i} has no references")));
    }
    Ok(())
}

fn ngram_counts<T: Ord + Clone>(tokens: &[T], n: usize) -> BTreeMap<Vec<T>, usize> {
    let mut counts = BTreeMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w.to_vec()).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus BLEU with clipped n-gram precisions for orders `1..=n`, uniform
/// weights and the brevity penalty against the closest reference length
/// (shorter reference on ties). No smoothing.
pub fn bleu<T: Ord + Clone>(corpus: &[EvalItem<T>], n: usize) -> Result<f64> {
    check_refs(corpus)?;
    if n == 0 {
        return Err(Error::Invalid("BLEU order must be at least 1".into()));
    }
    let mut matches = vec![0usize; n];
    let mut totals = vec![0usize; n];
    let (mut cand_len, mut ref_len) = (0usize, 0usize);
    for item in corpus {
        let c = item.candidate.len();
        cand_len += c;
        ref_len += item
            .references
            .iter()
            .map(Vec::len)
            .min_by_key(|&r| (r.abs_diff(c), r))
            .expect("references checked non-empty");
        for k in 1..=n {
            let cand = ngram_counts(&item.candidate, k);
            let mut max_ref: BTreeMap<&Vec<T>, usize> = BTreeMap::new();
            let ref_counts: Vec<_> = item.references.iter().map(|r| ngram_counts(r, k)).collect();
            for rc in &ref_counts {
                for (g, &cnt) in rc {
                    let e = max_ref.entry(g).or_insert(0);
                    *e = (*e).max(cnt);
                }
            }
            matches[k - 1] += cand
                .iter()
                .map(|(g, &cnt)| cnt.min(max_ref.get(g).copied().unwrap_or(0)))
                .sum::<usize>();
            totals[k - 1] += c.saturating_sub(k - 1);
        }
    }
    if matches.iter().zip(&totals).any(|(&m, &t)| m == 0 || t == 0) {
        return Ok(0.0);
    }
    let log_p: f64 = matches
        .iter()
        .zip(&totals)
        .map(|(&m, &t)| (m as f64 / t as f64).ln())
        .sum::<f64>()
        / n as f64;
    let bp = if cand_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / cand_len as f64).exp()
    };
    Ok(bp * log_p.exp())
}

/// Length of the longest common subsequence.
pub fn lcs_len<T: Eq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                prev[j + 1].max(cur[j])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// `(1+β²)PR / (R + β²P)` with `P = lcs/|cand|` and `R = lcs/|ref|`.
pub fn rouge_l_pair<T: Eq>(candidate: &[T], reference: &[T], beta: f64) -> f64 {
    let lcs = lcs_len(candidate, reference);
    if lcs == 0 {
        return 0.0;
    }
    let p = lcs as f64 / candidate.len() as f64;
    let r = lcs as f64 / reference.len() as f64;
    let b2 = beta * beta;
    (1.0 + b2) * p * r / (r + b2 * p)
}

/// Mean over items of the best per-reference ROUGE-L F-measure (β = 1.2).
pub fn rouge_l<T: Eq>(corpus: &[EvalItem<T>]) -> Result<f64> {
    check_refs(corpus)?;
    let total: f64 = corpus
        .iter()
        .map(|it| {
            it.references
                .iter()
                .map(|r| rouge_l_pair(&it.candidate, r, ROUGE_BETA))
                .fold(0.0, f64::max)
        })
        .sum();
    Ok(total / corpus.len() as f64)
}

struct TfIdf<T> {
    /// Per order, n-gram weight `tf · idf`.
    vecs: Vec<BTreeMap<Vec<T>, f64>>,
    norms: Vec<f64>,
    len: usize,
}

fn tf_idf<T: Ord + Clone>(tokens: &[T], df: &BTreeMap<Vec<T>, usize>, log_n: f64) -> TfIdf<T> {
    let mut vecs = Vec::with_capacity(CIDER_MAX_N);
    let mut norms = Vec::with_capacity(CIDER_MAX_N);
    for k in 1..=CIDER_MAX_N {
        let v: BTreeMap<Vec<T>, f64> = ngram_counts(tokens, k)
            .into_iter()
            .map(|(g, tf)| {
                let d = df.get(&g).copied().unwrap_or(0).max(1) as f64;
                (g, tf as f64 * (log_n - d.ln()))
            })
            .collect();
        norms.push(v.values().map(|x| x * x).sum::<f64>().sqrt());
        vecs.push(v);
    }
    TfIdf {
        vecs,
        norms,
        len: tokens.len(),
    }
}

fn cider_sim<T: Ord>(cand: &TfIdf<T>, reference: &TfIdf<T>) -> f64 {
    let delta = cand.len as f64 - reference.len as f64;
    let penalty = (-(delta * delta) / (2.0 * CIDER_SIGMA * CIDER_SIGMA)).exp();
    (0..CIDER_MAX_N)
        .map(|k| {
            let dot: f64 = cand.vecs[k]
                .iter()
                .map(|(g, &w)| {
                    let r = reference.vecs[k].get(g).copied().unwrap_or(0.0);
                    w.min(r) * r
                })
                .sum();
            if cand.norms[k] == 0.0 || reference.norms[k] == 0.0 {
                0.0
            } else {
                penalty * dot / (cand.norms[k] * reference.norms[k])
            }
        })
        .sum()
}

/// Per-item CIDEr-D scores. Document frequencies count the items whose
/// reference set contains an n-gram; the corpus must hold at least two items.
pub fn cider_d_items<T: Ord + Clone>(corpus: &[EvalItem<T>]) -> Result<Vec<f64>> {
    check_refs(corpus)?;
    if corpus.len() < 2 {
        return Err(Error::IdfUndefined);
    }
    let mut df: BTreeMap<Vec<T>, usize> = BTreeMap::new();
    for item in corpus {
        let mut seen: BTreeSet<Vec<T>> = BTreeSet::new();
        for r in &item.references {
            for k in 1..=CIDER_MAX_N {
                seen.extend(ngram_counts(r, k).into_keys());
            }
        }
        for g in seen {
            *df.entry(g).or_insert(0) += 1;
        }
    }
    let log_n = (corpus.len() as f64).ln();
    Ok(corpus
        .iter()
        .map(|item| {
            let cand = tf_idf(&item.candidate, &df, log_n);
            let total: f64 = item
                .references
                .iter()
                .map(|r| cider_sim(&cand, &tf_idf(r, &df, log_n)))
                .sum();
            total / item.references.len() as f64 / CIDER_MAX_N as f64
        })
        .collect())
}

/// Mean of [`cider_d_items`].
pub fn cider_d<T: Ord + Clone>(corpus: &[EvalItem<T>]) -> Result<f64> {
    let items = cider_d_items(corpus)?;
    Ok(items.iter().sum::<f64>() / items.len() as f64)
}

/// Fraction of items whose candidate equals one of its references.
pub fn exact_match<T: Eq>(corpus: &[EvalItem<T>]) -> Result<f64> {
    check_refs(corpus)?;
    let hits = corpus
        .iter()
        .filter(|it| it.references.contains(&it.candidate))
        .count();
    Ok(hits as f64 / corpus.len() as f64)
}

use serde::{Deserialize, Serialize};

use crate::capmetrics::{bleu, cider_d, exact_match, rouge_l, EvalItem};
use crate::diffmodel::AdcModel;
use crate::error::Result;
use crate::harness::train::PreparedPair;
use crate::pairsynth::vocab::words;
use crate::pairsynth::{Vocabulary, EOS};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Decoded {
    pub id: String,
    pub candidate: String,
    pub references: Vec<String>,
}

/// Corpus scores on a 0–100 scale. `cider` is CIDEr-D without the factor
/// of 10, times 100.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub bleu1: f64,
    pub bleu4: f64,
    pub rouge_l: f64,
    pub cider: f64,
    pub exact_match: f64,
}

impl Scores {
    pub fn mean(all: &[Scores]) -> Scores {
        let n = all.len().max(1) as f64;
        let mut m = Scores::default();
        for s in all {
            m.bleu1 += s.bleu1 / n;
            m.bleu4 += s.bleu4 / n;
            m.rouge_l += s.rouge_l / n;
            m.cider += s.cider / n;
            m.exact_match += s.exact_match / n;
        }
        m
    }
}

/// Beam-search captions for every pair. With `force_reference` the first
/// reference is returned instead of decoding.
pub fn decode_pairs(
    model: &AdcModel,
    vocab: &Vocabulary,
    pairs: &[PreparedPair],
    beam_width: usize,
    force_reference: bool,
) -> Result<Vec<Decoded>> {
    pairs
        .iter()
        .map(|p| {
            let references: Vec<String> = p.captions.iter().map(|c| words(c).join(" ")).collect();
            let candidate = if force_reference {
                references[0].clone()
            } else {
                let enc = model.encode_difference(&p.x, &p.y)?;
                let z_hat = enc.z_hat.expect("encoder output is recorded");
                let hyp = model.beam_search_decode(&z_hat, beam_width)?;
                vocab.detokenize(hyp.words(EOS))
            };
            Ok(Decoded {
                id: p.id.clone(),
                candidate,
                references,
            })
        })
        .collect()
}

pub fn score(decoded: &[Decoded]) -> Result<Scores> {
    let corpus: Vec<EvalItem<String>> = decoded
        .iter()
        .map(|d| {
            EvalItem::new(
                words(&d.candidate),
                d.references.iter().map(|r| words(r)).collect(),
            )
        })
        .collect();
    Ok(Scores {
        bleu1: 100.0 * bleu(&corpus, 1)?,
        bleu4: 100.0 * bleu(&corpus, 4)?,
        rouge_l: 100.0 * rouge_l(&corpus)?,
        cider: 100.0 * cider_d(&corpus)?,
        exact_match: 100.0 * exact_match(&corpus)?,
    })
}

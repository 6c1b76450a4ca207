use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::diffmodel::MaskMode;
use crate::harness::evaluate::Scores;
use crate::sddloss::SddMode;

pub const CIDER_NOTE: &str =
    "CIDEr is CIDEr-D (n = 1..4, sigma = 6, clipped) without the x10 factor, reported x100. \
     METEOR, SPICE and SPIDEr are not computed.";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub id: String,
    pub mask: String,
    pub disent: String,
    pub lambda: f64,
    pub bleu1: f64,
    pub bleu4: f64,
    pub meteor: Option<f64>,
    #[serde(rename = "rougeL")]
    pub rouge_l: f64,
    pub cider: f64,
    pub spice: Option<f64>,
    pub spider: Option<f64>,
    pub exact_match: f64,
}

impl ReportRow {
    pub fn new(id: &str, mask: MaskMode, sdd: SddMode, lambda: f64, s: &Scores) -> Self {
        Self {
            id: id.to_owned(),
            mask: match mask {
                MaskMode::CrossOnly => "cross",
                MaskMode::None => "none",
            }
            .into(),
            disent: match sdd {
                SddMode::Off => "none",
                SddMode::Early => "early",
                SddMode::Late => "late",
            }
            .into(),
            lambda,
            bleu1: s.bleu1,
            bleu4: s.bleu4,
            meteor: None,
            rouge_l: s.rouge_l,
            cider: s.cider,
            spice: None,
            spider: None,
            exact_match: s.exact_match,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    /// Effective configuration of the run.
    pub config: serde_json::Value,
    pub rows: Vec<ReportRow>,
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_owned(), |x| format!("{x:.1}"))
}

impl Report {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Fixed-width table, one line per row.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<6} {:<6} {:<7} {:>6} | {:>7} {:>7} {:>7} {:>8} {:>7} {:>7} {:>7} | {:>6}",
            "ID",
            "Mask",
            "Disent.",
            "lambda",
            "BLEU-1",
            "BLEU-4",
            "METEOR",
            "ROUGE-L",
            "CIDEr",
            "SPICE",
            "SPIDEr",
            "Exact"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<6} {:<6} {:<7} {:>6.1} | {:>7.1} {:>7.1} {:>7} {:>8.1} {:>7.1} {:>7} {:>7} | {:>6.1}",
                r.id,
                r.mask,
                r.disent,
                r.lambda,
                r.bleu1,
                r.bleu4,
                opt(r.meteor),
                r.rouge_l,
                r.cider,
                opt(r.spice),
                opt(r.spider),
                r.exact_match
            );
        }
        let _ = writeln!(s, "{CIDER_NOTE}");
        s
    }
}

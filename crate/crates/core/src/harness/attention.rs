//! Encoder attention maps: export as CSV, binary PGM and a JSON sidecar,
//! plus the block statistics used to inspect them.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::diffmodel::AdcModel;
use crate::error::{Error, Result};
use crate::harness::train::PreparedPair;
use crate::numcore::layers::average_heads;
use crate::numcore::{BlockBounds, Tensor};
use crate::pairsynth::{DifferenceType, PairSpec};

/// Head-averaged `[L × L]` encoder attention per layer.
pub fn attention_maps(
    model: &AdcModel,
    x: &Tensor,
    y: &Tensor,
) -> Result<(Vec<Tensor>, BlockBounds)> {
    let enc = model.encode_difference(x, y)?;
    Ok((
        enc.attention.iter().map(average_heads).collect(),
        enc.bounds,
    ))
}

/// Share of total attention mass whose query and key lie in different clips.
pub fn opposite_block_mass(att: &Tensor, bounds: BlockBounds) -> f64 {
    let (r, c) = (att.rows(), att.cols());
    let mut cross = 0.0;
    for i in 0..r {
        for j in 0..c {
            if bounds.side(i) != bounds.side(j) {
                cross += att.at(i, j);
            }
        }
    }
    cross / att.sum()
}

/// Mean attention a key column receives, averaged over frame columns inside
/// and outside the changed event's interval (both clips). `None` unless the
/// pair differs in one event.
pub fn event_focus(att: &Tensor, bounds: BlockBounds, spec: &PairSpec) -> Option<(f64, f64)> {
    if spec.difference == DifferenceType::BgLevel {
        return None;
    }
    let ev = &spec.events[spec.target_event?];
    let interval = ev.onset..ev.onset + ev.duration;
    let col_mean =
        |j: usize| (0..att.rows()).map(|i| att.at(i, j)).sum::<f64>() / att.rows() as f64;
    let (mut inside, mut outside) = (Vec::new(), Vec::new());
    for (start, clip) in [
        (bounds.clip_x().start, bounds.clip_x()),
        (bounds.clip_y().start, bounds.clip_y()),
    ] {
        for j in clip {
            if interval.contains(&(j - start)) {
                inside.push(col_mean(j));
            } else {
                outside.push(col_mean(j));
            }
        }
    }
    if inside.is_empty() || outside.is_empty() {
        return None;
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Some((mean(&inside), mean(&outside)))
}

pub fn to_csv(att: &Tensor) -> String {
    let mut s = String::new();
    for i in 0..att.rows() {
        let row: Vec<String> = att.row(i).iter().map(|v| format!("{v:e}")).collect();
        let _ = writeln!(s, "{}", row.join(","));
    }
    s
}

pub fn parse_csv(text: &str) -> Result<Vec<Vec<f64>>> {
    text.lines()
        .map(|l| {
            l.split(',')
                .map(|v| {
                    v.trim()
                        .parse()
                        .map_err(|_| Error::Format(format!("bad CSV value {v:?}")))
                })
                .collect()
        })
        .collect()
}

/// Binary greyscale image, brightest at the matrix maximum.
pub fn to_pgm(att: &Tensor) -> Vec<u8> {
    let (r, c) = (att.rows(), att.cols());
    let max = att.data().iter().copied().fold(0.0, f64::max);
    let mut out = format!("P5\n{c} {r}\n255\n").into_bytes();
    out.extend(att.data().iter().map(|&v| {
        if max > 0.0 {
            (255.0 * v / max).round().clamp(0.0, 255.0) as u8
        } else {
            0
        }
    }));
    out
}

#[derive(Serialize)]
struct Sidecar<'a> {
    pair_id: &'a str,
    layer: usize,
    heads_averaged: usize,
    rows: &'static str,
    columns: &'static str,
    size: usize,
    token_x: usize,
    clip_x: [usize; 2],
    token_y: usize,
    clip_y: [usize; 2],
    csv: String,
    pgm: String,
}

/// Writes `<pair>_layer<k>.csv`, `.pgm` and `.json` per encoder layer.
pub fn export_attention(model: &AdcModel, pair: &PreparedPair, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (maps, b) = attention_maps(model, &pair.x, &pair.y)?;
    let mut written = Vec::new();
    for (layer, att) in maps.iter().enumerate() {
        let stem = format!("{}_layer{layer}", pair.id);
        let csv = dir.join(format!("{stem}.csv"));
        let pgm = dir.join(format!("{stem}.pgm"));
        let json = dir.join(format!("{stem}.json"));
        fs::write(&csv, to_csv(att)).map_err(|e| Error::io(&csv, e))?;
        fs::write(&pgm, to_pgm(att)).map_err(|e| Error::io(&pgm, e))?;
        let side = Sidecar {
            pair_id: &pair.id,
            layer,
            heads_averaged: model.config.heads,
            rows: "query positions [tok_x, X, tok_y, Y]",
            columns: "key positions [tok_x, X, tok_y, Y]",
            size: b.len(),
            token_x: b.token_x(),
            clip_x: [b.clip_x().start, b.clip_x().end],
            token_y: b.token_y(),
            clip_y: [b.clip_y().start, b.clip_y().end],
            csv: format!("{stem}.csv"),
            pgm: format!("{stem}.pgm"),
        };
        let mut text = serde_json::to_string_pretty(&side)?;
        text.push('\n');
        fs::write(&json, text).map_err(|e| Error::io(&json, e))?;
        written.extend([csv, pgm, json]);
    }
    Ok(written)
}

//! Similarity–discrepancy disentanglement.
//!
//! The hidden dimension of the pair sequence is split in half. The upper
//! ("similar") half of each clip view is embedded by Φ and pulled together
//! across the pair with a symmetric InfoNCE loss over the minibatch; the
//! lower ("discrepant") half is embedded by Ψ and its matched-pair cosine
//! similarity is minimized. Each view includes its clip's special token.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::layers::BiLstmPool;
use crate::numcore::{BlockBounds, Graph, ParamStore, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SddMode {
    Off,
    /// Applied to the encoder input.
    Early,
    /// Applied to the encoder output.
    Late,
}

/// Which tensor early disentanglement reads.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EarlySource {
    /// Concatenated embeddings before positional encoding.
    Embeddings,
    /// Embeddings after positional encoding.
    Positioned,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SddConfig {
    pub lambda: f64,
    pub mode: SddMode,
    pub temperature: f64,
    /// Hidden units per LSTM direction in Φ and Ψ.
    pub embed_hidden: usize,
    pub early_source: EarlySource,
}

impl SddConfig {
    pub const DEFAULT_TEMPERATURE: f64 = 0.07;

    pub fn off() -> Self {
        Self {
            lambda: 0.0,
            mode: SddMode::Off,
            temperature: Self::DEFAULT_TEMPERATURE,
            embed_hidden: 16,
            early_source: EarlySource::Embeddings,
        }
    }

    /// Φ/Ψ hidden size scaled from 192 units per direction at H=768.
    pub fn new(mode: SddMode, lambda: f64, hidden: usize) -> Self {
        Self {
            lambda,
            mode,
            embed_hidden: (hidden / 4).max(1),
            ..Self::off()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!(
                "lambda must be >= 0, got {}",
                self.lambda
            )));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!(
                "temperature must be > 0, got {}",
                self.temperature
            )));
        }
        if self.embed_hidden == 0 {
            return Err(Error::Config("embed_hidden must be positive".into()));
        }
        Ok(())
    }

    pub fn active(&self) -> bool {
        self.mode != SddMode::Off
    }
}

/// The two embedding networks: Φ for similar parts, Ψ for discrepant parts.
#[derive(Clone, Debug)]
pub struct SddHeads {
    pub phi: BiLstmPool,
    pub psi: BiLstmPool,
}

impl SddHeads {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        hidden: usize,
        cfg: &SddConfig,
        rng: &mut R,
    ) -> Result<Self> {
        if !hidden.is_multiple_of(2) {
            return Err(Error::Config(format!("hidden size {hidden} must be even")));
        }
        Ok(Self {
            phi: BiLstmPool::new(store, "sdd.phi", hidden / 2, cfg.embed_hidden, rng)?,
            psi: BiLstmPool::new(store, "sdd.psi", hidden / 2, cfg.embed_hidden, rng)?,
        })
    }
}

/// Hidden-dimension split of a pair sequence `[H × L]`.
#[derive(Clone, Debug)]
pub struct SplitParts {
    pub similar: Tensor,
    pub discrepant: Tensor,
    /// `[tok_x_S, X_S]`
    pub x_similar: Tensor,
    /// `[tok_y_S, Y_S]`
    pub y_similar: Tensor,
    pub x_discrepant: Tensor,
    pub y_discrepant: Tensor,
}

/// First `H/2` rows are the similar part, the last `H/2` the discrepant part.
pub fn split_parts(z: &Tensor, bounds: BlockBounds) -> Result<SplitParts> {
    let (h, l) = z.dims2()?;
    if h % 2 != 0 {
        return Err(Error::Config(format!("hidden size {h} must be even")));
    }
    if l != bounds.len() {
        return Err(Error::Shape(format!(
            "{l} columns for block length {}",
            bounds.len()
        )));
    }
    let half = h / 2;
    let similar = z.slice_rows(0, half)?;
    let discrepant = z.slice_rows(half, half)?;
    let (xb, yb) = (bounds.x_block(), bounds.y_block());
    Ok(SplitParts {
        x_similar: similar.slice_cols(xb.start, xb.len())?,
        y_similar: similar.slice_cols(yb.start, yb.len())?,
        x_discrepant: discrepant.slice_cols(xb.start, xb.len())?,
        y_discrepant: discrepant.slice_cols(yb.start, yb.len())?,
        similar,
        discrepant,
    })
}

fn check_batch(g: &Graph, a: Var, b: Var) -> Result<usize> {
    let (na, ea) = g.value(a).dims2()?;
    let (nb, eb) = g.value(b).dims2()?;
    if na != nb || ea != eb {
        return Err(Error::Shape(format!(
            "embedding batches {na}x{ea} vs {nb}x{eb}"
        )));
    }
    Ok(na)
}

/// Symmetric InfoNCE over `A [N×E]`, `B [N×E]` with cosine logits scaled by
/// `1/temperature`: the mean of the row-wise (A→B) and column-wise (B→A)
/// cross-entropies against the diagonal.
pub fn sym_info_nce_var(g: &mut Graph, a: Var, b: Var, temperature: f64) -> Result<Var> {
    let n = check_batch(g, a, b)?;
    let an = g.normalize_rows(a)?;
    let bn = g.normalize_rows(b)?;
    let sims = g.matmul_t(an, false, bn, true)?;
    let logits = g.scale(sims, 1.0 / temperature);
    let targets: Vec<usize> = (0..n).collect();
    let a_to_b = g.cross_entropy_sum(logits, &targets)?;
    let logits_t = g.transpose(logits)?;
    let b_to_a = g.cross_entropy_sum(logits_t, &targets)?;
    let both = g.add(a_to_b, b_to_a)?;
    Ok(g.scale(both, 0.5 / n as f64))
}

/// Mean cosine similarity of matched rows.
pub fn pair_cos_sim_var(g: &mut Graph, a: Var, b: Var) -> Result<Var> {
    let n = check_batch(g, a, b)?;
    let an = g.normalize_rows(a)?;
    let bn = g.normalize_rows(b)?;
    let prod = g.mul(an, bn)?;
    let total = g.sum(prod);
    Ok(g.scale(total, 1.0 / n as f64))
}

fn eval_pair(
    a: &Tensor,
    b: &Tensor,
    f: impl Fn(&mut Graph, Var, Var) -> Result<Var>,
) -> Result<f64> {
    let store = ParamStore::new();
    let mut g = Graph::new(&store);
    let (av, bv) = (g.constant(a.clone()), g.constant(b.clone()));
    let out = f(&mut g, av, bv)?;
    Ok(g.value(out).data()[0])
}

pub fn sym_info_nce(a: &Tensor, b: &Tensor, temperature: f64) -> Result<f64> {
    eval_pair(a, b, |g, a, b| sym_info_nce_var(g, a, b, temperature))
}

/// Mean cosine similarity of matched rows, computed as
/// `a·b / sqrt(|a|²|b|²)` so that parallel rows give exactly ±1.
pub fn pair_cos_sim(a: &Tensor, b: &Tensor) -> Result<f64> {
    let (n, e) = a.dims2()?;
    if b.dims2()? != (n, e) {
        return Err(Error::Shape(format!(
            "embedding batches {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mut total = 0.0;
    for i in 0..n {
        let (ra, rb) = (a.row(i), b.row(i));
        let dot: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
        let na: f64 = ra.iter().map(|x| x * x).sum();
        let nb: f64 = rb.iter().map(|x| x * x).sum();
        if na == 0.0 || nb == 0.0 {
            return Err(Error::DegenerateEmbedding);
        }
        total += (dot / (na * nb).sqrt()).clamp(-1.0, 1.0);
    }
    Ok(total / n as f64)
}

/// Graph handles of the three loss terms.
#[derive(Clone, Copy, Debug)]
pub struct SddTerms {
    pub similar: Var,
    pub discrepant: Var,
    pub total: Var,
}

/// SDD over a minibatch. Each entry is a pair sequence `[H × L]` (encoder
/// input for early mode, output for late mode) with its block layout.
pub fn sdd_loss_var(
    g: &mut Graph,
    heads: &SddHeads,
    batch: &[(Var, BlockBounds)],
    cfg: &SddConfig,
) -> Result<SddTerms> {
    if batch.is_empty() {
        return Err(Error::Invalid("SDD needs a non-empty batch".into()));
    }
    let mut phi_x = Vec::with_capacity(batch.len());
    let mut phi_y = Vec::with_capacity(batch.len());
    let mut psi_x = Vec::with_capacity(batch.len());
    let mut psi_y = Vec::with_capacity(batch.len());
    for &(z, bounds) in batch {
        let (h, l) = g.value(z).dims2()?;
        if h % 2 != 0 {
            return Err(Error::Config(format!("hidden size {h} must be even")));
        }
        if l != bounds.len() {
            return Err(Error::Shape(format!(
                "{l} columns for block length {}",
                bounds.len()
            )));
        }
        let half = h / 2;
        let similar = g.slice_rows(z, 0, half)?;
        let discrepant = g.slice_rows(z, half, half)?;
        let e = heads.phi.output_dim();
        let pooled = [
            (
                heads.phi.pool_range(g, similar, bounds.x_block())?,
                &mut phi_x,
            ),
            (
                heads.phi.pool_range(g, similar, bounds.y_block())?,
                &mut phi_y,
            ),
        ];
        for (v, dst) in pooled {
            dst.push(g.reshape(v, &[1, e])?);
        }
        let e = heads.psi.output_dim();
        let pooled = [
            (
                heads.psi.pool_range(g, discrepant, bounds.x_block())?,
                &mut psi_x,
            ),
            (
                heads.psi.pool_range(g, discrepant, bounds.y_block())?,
                &mut psi_y,
            ),
        ];
        for (v, dst) in pooled {
            dst.push(g.reshape(v, &[1, e])?);
        }
    }
    let (a, b) = (g.concat_rows(&phi_x)?, g.concat_rows(&phi_y)?);
    let similar = sym_info_nce_var(g, a, b, cfg.temperature)?;
    let (a, b) = (g.concat_rows(&psi_x)?, g.concat_rows(&psi_y)?);
    let discrepant = pair_cos_sim_var(g, a, b)?;
    let total = g.add(similar, discrepant)?;
    Ok(SddTerms {
        similar,
        discrepant,
        total,
    })
}

/// Plain-value SDD terms `(L_S, L_D, L_SDD)` for sequences `[H × L]`.
pub fn sdd_loss(
    store: &ParamStore,
    heads: &SddHeads,
    batch: &[(Tensor, BlockBounds)],
    cfg: &SddConfig,
) -> Result<(f64, f64, f64)> {
    if cfg.mode == SddMode::Off {
        return Err(Error::Config("SDD mode is off".into()));
    }
    let mut g = Graph::new(store);
    let vars: Vec<(Var, BlockBounds)> = batch
        .iter()
        .map(|(z, b)| (g.constant(z.clone()), *b))
        .collect();
    let terms = sdd_loss_var(&mut g, heads, &vars, cfg)?;
    let v = |x: Var| g.value(x).data()[0];
    Ok((v(terms.similar), v(terms.discrepant), v(terms.total)))
}

/// `L = L_CE + λ·L_SDD`.
pub fn total_loss(ce: f64, sdd: f64, lambda: f64) -> f64 {
    ce + lambda * sdd
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(rows: &[Vec<f64>]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn split_of_four_rows() {
        let z = Tensor::from_fn(&[4, 4], |i| i as f64);
        let parts = split_parts(&z, BlockBounds::new(1, 1).unwrap()).unwrap();
        assert_eq!(parts.similar.data(), &z.data()[..8]);
        assert_eq!(parts.discrepant.data(), &z.data()[8..]);
        assert_eq!(parts.x_similar.shape(), &[2, 2]);
        assert_eq!(parts.y_discrepant.data(), &[10.0, 11.0, 14.0, 15.0]);
    }

    #[test]
    fn full_size_split_height() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let b = BlockBounds::new(2, 3).unwrap();
        let z = Tensor::normal(&[768, b.len()], 1.0, &mut rng);
        let parts = split_parts(&z, b).unwrap();
        assert_eq!(parts.similar.shape(), &[384, 7]);
        assert_eq!(parts.discrepant.shape(), &[384, 7]);
    }

    #[test]
    fn odd_hidden_is_a_config_error() {
        let z = Tensor::zeros(&[3, 4]);
        let err = split_parts(&z, BlockBounds::new(1, 1).unwrap()).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn info_nce_closed_forms() {
        let a = t(&[vec![0.3, -1.0, 2.0]]);
        assert_eq!(sym_info_nce(&a, &a, 0.07).unwrap(), 0.0);

        let same = t(&[vec![1.0, 2.0], vec![1.0, 2.0], vec![1.0, 2.0]]);
        let l = sym_info_nce(&same, &same, 0.07).unwrap();
        assert!((l - 3f64.ln()).abs() < 1e-9);

        let e = t(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let l = sym_info_nce(&e, &e, 1.0).unwrap();
        assert!((l - (1.0 + (-1f64).exp()).ln()).abs() < 1e-12);
    }

    #[test]
    fn zero_embedding_is_degenerate() {
        let a = t(&[vec![0.0, 0.0]]);
        let b = t(&[vec![1.0, 0.0]]);
        assert!(matches!(
            sym_info_nce(&a, &b, 1.0),
            Err(Error::DegenerateEmbedding)
        ));
        assert!(matches!(
            pair_cos_sim(&a, &b),
            Err(Error::DegenerateEmbedding)
        ));
    }

    #[test]
    fn cosine_geometries() {
        let a = t(&[vec![1.0, 2.0], vec![-3.0, 0.5]]);
        assert_eq!(pair_cos_sim(&a, &a).unwrap(), 1.0);
        let perp = t(&[vec![-2.0, 1.0], vec![0.5, 3.0]]);
        assert_eq!(pair_cos_sim(&a, &perp).unwrap(), 0.0);
        let neg = t(&[vec![-1.0, -2.0], vec![3.0, -0.5]]);
        assert_eq!(pair_cos_sim(&a, &neg).unwrap(), -1.0);
        let b = t(&[vec![0.3, -2.0], vec![1.0, 1.5]]);
        let via_graph = eval_pair(&a, &b, pair_cos_sim_var).unwrap();
        assert!((pair_cos_sim(&a, &b).unwrap() - via_graph).abs() < 1e-12);
    }

    #[test]
    fn total_loss_arithmetic() {
        assert_eq!(total_loss(1.0, 0.5, 2.0), 2.0);
        assert_eq!(total_loss(1.25, 9.0, 0.0), 1.25);
    }

    #[test]
    fn config_validation() {
        for lambda in [0.0, 0.5, 1.0, 2.0] {
            SddConfig::new(SddMode::Late, lambda, 64)
                .validate()
                .unwrap();
        }
        assert!(SddConfig::new(SddMode::Late, -0.1, 64).validate().is_err());
        let mut c = SddConfig::off();
        c.temperature = 0.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn batch_of_one_has_zero_similarity_term() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut store = ParamStore::new();
        let cfg = SddConfig::new(SddMode::Late, 1.0, 8);
        let heads = SddHeads::new(&mut store, 8, &cfg, &mut rng).unwrap();
        let b = BlockBounds::new(3, 2).unwrap();
        let z = Tensor::normal(&[8, b.len()], 1.0, &mut rng);
        let (ls, ld, total) = sdd_loss(&store, &heads, &[(z, b)], &cfg).unwrap();
        assert_eq!(ls, 0.0);
        assert_eq!(total, ls + ld);
        assert!((-1.0..=1.0).contains(&ld));
        assert!(sdd_loss(&store, &heads, &[], &cfg).is_err());
    }
}

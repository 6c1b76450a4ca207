//! Reverse-mode gradients of every layer type against central differences.

use adc_core::numcore::layers::{
    BiLstmPool, Embedding, FeedForward, LayerNorm, Linear, MultiHeadAttention,
};
use adc_core::numcore::{
    grad_check, grad_check_params, AttentionMask, BlockBounds, Graph, ParamStore, Tensor, Var,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-5;
const TOL: f64 = 1e-4;
const SEEDS: u64 = 10;

/// Weighted sum so that every output component carries a distinct weight.
fn weighted_sum(g: &mut Graph, y: Var, seed: u64) -> adc_core::Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    let shape = g.value(y).shape().to_vec();
    let w = g.constant(Tensor::normal(&shape, 1.0, &mut rng));
    let p = g.mul(y, w)?;
    Ok(g.sum(p))
}

fn all_params(store: &ParamStore) -> Vec<adc_core::numcore::ParamId> {
    store.ids().collect()
}

#[test]
fn linear_layer() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let lin = Linear::new(&mut store, "lin", 5, 3, &mut rng).unwrap();
        let x = Tensor::normal(&[4, 5], 1.0, &mut rng);
        let f = |g: &mut Graph, x: Var| {
            let y = lin.forward_rows(g, x)?;
            weighted_sum(g, y, seed)
        };
        assert!(grad_check(&store, f, &x, EPS).unwrap() < TOL);
        let xc = Tensor::normal(&[5, 6], 1.0, &mut rng);
        let f = |g: &mut Graph| {
            let x = g.constant(xc.clone());
            let y = lin.forward_cols(g, x)?;
            weighted_sum(g, y, seed)
        };
        let err = grad_check_params(&store, &all_params(&store), f, EPS, None).unwrap();
        assert!(err < TOL, "seed {seed}: {err}");
    }
}

#[test]
fn layer_norm() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let ln = LayerNorm::new(&mut store, "ln", 6).unwrap();
        // non-trivial affine parameters
        for id in all_params(&store) {
            let t = Tensor::normal(store.get(id).shape(), 1.0, &mut rng);
            store.set(id, t).unwrap();
        }
        let x = Tensor::normal(&[3, 6], 2.0, &mut rng);
        let f = |g: &mut Graph, x: Var| {
            let y = ln.forward(g, x)?;
            weighted_sum(g, y, seed)
        };
        let err = grad_check(&store, f, &x, EPS).unwrap();
        assert!(err < TOL, "seed {seed}: {err}");
        let f = |g: &mut Graph| {
            let xv = g.constant(x.clone());
            let y = ln.forward(g, xv)?;
            weighted_sum(g, y, seed)
        };
        assert!(grad_check_params(&store, &all_params(&store), f, EPS, None).unwrap() < TOL);
    }
}

#[test]
fn masked_multi_head_attention() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let mha = MultiHeadAttention::new(&mut store, "mha", 8, 2, &mut rng).unwrap();
        let bounds = BlockBounds::new(2, 3).unwrap();
        let mask = AttentionMask::cross_only(bounds, false);
        let x = Tensor::normal(&[bounds.len(), 8], 1.0, &mut rng);
        let f = |g: &mut Graph, x: Var| {
            let out = mha.forward(g, x, x, Some(&mask))?;
            weighted_sum(g, out.output, seed)
        };
        let err = grad_check(&store, f, &x, EPS).unwrap();
        assert!(err < TOL, "seed {seed}: input {err}");
        let f = |g: &mut Graph| {
            let xv = g.constant(x.clone());
            let out = mha.forward(g, xv, xv, Some(&mask))?;
            weighted_sum(g, out.output, seed)
        };
        let err = grad_check_params(&store, &all_params(&store), f, EPS, None).unwrap();
        assert!(err < TOL, "seed {seed}: params {err}");
    }
}

#[test]
fn feed_forward() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let ff = FeedForward::new(&mut store, "ff", 4, 7, &mut rng).unwrap();
        let x = Tensor::normal(&[5, 4], 1.0, &mut rng);
        let f = |g: &mut Graph, x: Var| {
            let y = ff.forward(g, x, 0.0)?;
            weighted_sum(g, y, seed)
        };
        let err = grad_check(&store, f, &x, EPS).unwrap();
        assert!(err < TOL, "seed {seed}: {err}");
    }
}

#[test]
fn bidirectional_lstm_pooling() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let lstm = BiLstmPool::new(&mut store, "phi", 4, 3, &mut rng).unwrap();
        let x = Tensor::normal(&[4, 6], 1.0, &mut rng);
        let f = |g: &mut Graph, x: Var| {
            let y = lstm.pool(g, x)?;
            weighted_sum(g, y, seed)
        };
        let err = grad_check(&store, f, &x, EPS).unwrap();
        assert!(err < TOL, "seed {seed}: input {err}");
        let f = |g: &mut Graph| {
            let xv = g.constant(x.clone());
            let y = lstm.pool(g, xv)?;
            weighted_sum(g, y, seed)
        };
        let err = grad_check_params(&store, &all_params(&store), f, EPS, None).unwrap();
        assert!(err < TOL, "seed {seed}: params {err}");
    }
}

#[test]
fn embedding_and_cross_entropy() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let emb = Embedding::new(&mut store, "emb", 6, 4, &mut rng).unwrap();
        let lin = Linear::new(&mut store, "out", 4, 6, &mut rng).unwrap();
        let f = |g: &mut Graph| {
            let e = emb.lookup(g, &[1, 3, 3, 5])?;
            let logits = lin.forward_rows(g, e)?;
            g.cross_entropy_sum(logits, &[2, 0, 5, 1])
        };
        let err = grad_check_params(&store, &all_params(&store), f, EPS, None).unwrap();
        assert!(err < TOL, "seed {seed}: {err}");
    }
}

#[test]
fn structural_ops() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let store = ParamStore::new();
        let x = Tensor::normal(&[4, 6], 1.0, &mut rng);
        let f = |g: &mut Graph, x: Var| {
            let t = g.transpose(x)?;
            let a = g.slice_rows(t, 1, 3)?;
            let b = g.slice_cols(x, 2, 3)?;
            let ab = g.matmul(b, a)?;
            let c = g.concat_cols(&[ab, x])?;
            let d = g.concat_rows(&[c, c])?;
            let n = g.normalize_rows(d)?;
            let m = g.mean_cols(n)?;
            let r = g.reshape(m, &[2, 4])?;
            let s = g.sub(r, r)?;
            let s = g.add(s, r)?;
            let s = g.relu(s);
            let s = g.scale(s, 1.5);
            weighted_sum(g, s, seed)
        };
        let err = grad_check(&store, f, &x, EPS).unwrap();
        assert!(err < TOL, "seed {seed}: {err}");
    }
}

use adc_core::diffmodel::{
    beam_search, greedy_decode, AdcModel, BeamConfig, MaskMode, ModelConfig, StepScorer,
};
use adc_core::harness::{loss_vars, PreparedPair};
use adc_core::numcore::{grad_check_params, BlockBounds, Graph, Tensor};
use adc_core::pairsynth::{pair_spec, Split, BOS, EOS};
use adc_core::sddloss::{EarlySource, SddConfig, SddMode};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const BANDS: usize = 5;

fn tiny_config(mask: MaskMode) -> ModelConfig {
    ModelConfig {
        hidden: 8,
        heads: 2,
        encoder_layers: 2,
        decoder_layers: 1,
        ff_dim: 12,
        dropout: 0.0,
        vocab_size: 7,
        max_caption_len: 6,
        input_feature_dim: BANDS,
        mask,
        token_self_attention: false,
        positions: adc_core::diffmodel::PositionMode::Continuous,
    }
}

fn tiny_model(mask: MaskMode, sdd: SddConfig, seed: u64) -> AdcModel {
    AdcModel::new(tiny_config(mask), sdd, seed).unwrap()
}

fn clip(t: usize, seed: u64) -> Tensor {
    Tensor::normal(&[BANDS, t], 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn pair(id: usize, t_x: usize, t_y: usize, captions: Vec<Vec<usize>>) -> PreparedPair {
    PreparedPair {
        id: format!("p{id}"),
        x: clip(t_x, 100 + id as u64),
        y: clip(t_y, 200 + id as u64),
        captions: vec![String::new(); captions.len()],
        tokens: captions,
        spec: pair_spec(0, Split::Dev, id, 100),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn same_clip_attention_is_exactly_zero(t_x in 1usize..7, t_y in 1usize..7, seed in 0u64..1000) {
        let model = tiny_model(MaskMode::CrossOnly, SddConfig::off(), seed);
        let enc = model.encode_difference(&clip(t_x, seed), &clip(t_y, seed + 1)).unwrap();
        let b = enc.bounds;
        for att in &enc.attention {
            let (heads, l) = (att.shape()[0], att.shape()[1]);
            for h in 0..heads {
                for i in 0..l {
                    let row = &att.data()[(h * l + i) * l..(h * l + i + 1) * l];
                    prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                    for (j, &w) in row.iter().enumerate() {
                        if b.side(i) == b.side(j) {
                            prop_assert_eq!(w, 0.0);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn encoder_preserves_shape(t_x in 1usize..9, t_y in 1usize..9, seed in 0u64..1000) {
        let model = tiny_model(MaskMode::CrossOnly, SddConfig::off(), seed);
        let enc = model.encode_difference(&clip(t_x, seed), &clip(t_y, seed + 1)).unwrap();
        prop_assert_eq!(enc.z.shape(), &[8, t_x + t_y + 2]);
        let z_hat = enc.z_hat.unwrap();
        prop_assert_eq!(z_hat.shape(), enc.z.shape());
    }

    #[test]
    fn decoder_is_causal(seed in 0u64..1000, t in 1usize..5, a in 3usize..7, b in 3usize..7) {
        let model = tiny_model(MaskMode::CrossOnly, SddConfig::off(), seed);
        let z_hat = model.encode_difference(&clip(3, seed), &clip(4, seed + 1)).unwrap().z_hat.unwrap();
        let mut first = vec![BOS, 4, 5, 6, 4, 5];
        let mut second = first.clone();
        first[t] = a;
        second[t] = b;
        let l1 = model.decode_teacher_forcing(&z_hat, &first).unwrap();
        let l2 = model.decode_teacher_forcing(&z_hat, &second).unwrap();
        for r in 0..t {
            prop_assert_eq!(l1.row(r), l2.row(r));
        }
    }

    #[test]
    fn unit_beam_equals_greedy(seed in 0u64..10_000) {
        let model = tiny_model(MaskMode::CrossOnly, SddConfig::off(), seed);
        let z_hat = model.encode_difference(&clip(3, seed), &clip(2, seed + 1)).unwrap().z_hat.unwrap();
        let beam = model.beam_search_decode(&z_hat, 1).unwrap();
        let greedy = model.greedy_decode(&z_hat).unwrap();
        prop_assert_eq!(beam.token_ids, greedy.token_ids);
    }
}

#[test]
fn swapping_the_clips_changes_the_encoding() {
    let model = tiny_model(MaskMode::CrossOnly, SddConfig::off(), 3);
    let (x, y) = (clip(4, 1), clip(4, 2));
    let a = model.encode_difference(&x, &y).unwrap().z_hat.unwrap();
    let b = model.encode_difference(&y, &x).unwrap().z_hat.unwrap();
    assert!(a.max_abs_diff(&b) > 1e-3);
}

#[test]
fn unmasked_encoder_attends_within_clips() {
    let model = tiny_model(MaskMode::None, SddConfig::off(), 3);
    let enc = model.encode_difference(&clip(4, 1), &clip(4, 2)).unwrap();
    let b = enc.bounds;
    let l = b.len();
    let same: f64 = (0..l)
        .flat_map(|i| (0..l).map(move |j| (i, j)))
        .filter(|&(i, j)| b.side(i) == b.side(j))
        .map(|(i, j)| enc.attention[0].data()[i * l + j])
        .sum();
    assert!(same > 0.1);
}

fn batch() -> Vec<PreparedPair> {
    vec![
        pair(0, 3, 2, vec![vec![BOS, 4, 5, EOS], vec![BOS, 6, EOS]]),
        pair(1, 2, 3, vec![vec![BOS, 5, 5, 6, EOS]]),
    ]
}

#[test]
fn every_parameter_receives_a_gradient() {
    for mode in [SddMode::Early, SddMode::Late] {
        let model = tiny_model(MaskMode::CrossOnly, SddConfig::new(mode, 1.0, 8), 5);
        let pairs = batch();
        let refs: Vec<&PreparedPair> = pairs.iter().collect();
        let mut g = Graph::new(&model.store);
        let v = loss_vars(&model, &mut g, &refs).unwrap();
        g.backward(v.total).unwrap();
        let grads = g.param_grads();
        for id in model.store.ids() {
            let grad = grads[id.index()].as_ref();
            assert!(
                grad.is_some(),
                "{mode:?}: no gradient for {}",
                model.store.name(id)
            );
            assert!(
                grad.unwrap().data().iter().any(|&v| v != 0.0),
                "{}",
                model.store.name(id)
            );
        }
    }
}

#[test]
fn full_loss_gradient_matches_finite_differences() {
    let cases = [
        (SddMode::Late, EarlySource::Embeddings),
        (SddMode::Early, EarlySource::Embeddings),
        (SddMode::Early, EarlySource::Positioned),
    ];
    for (mode, source) in cases {
        for seed in 0..3 {
            let sdd = SddConfig {
                early_source: source,
                ..SddConfig::new(mode, 1.0, 8)
            };
            let model = tiny_model(MaskMode::CrossOnly, sdd, seed);
            let pairs = batch();
            let refs: Vec<&PreparedPair> = pairs.iter().collect();
            let ids: Vec<_> = model.store.ids().collect();
            let err = grad_check_params(
                &model.store,
                &ids,
                |g| Ok(loss_vars(&model, g, &refs)?.total),
                1e-5,
                Some(4),
            )
            .unwrap();
            assert!(err < 1e-4, "{mode:?}/{source:?} seed {seed}: {err}");
        }
    }
}

#[test]
fn lambda_scales_the_disentanglement_gradient() {
    let pairs = batch();
    let refs: Vec<&PreparedPair> = pairs.iter().collect();
    let grads_for = |lambda: f64| {
        let model = tiny_model(
            MaskMode::CrossOnly,
            SddConfig::new(SddMode::Late, lambda, 8),
            9,
        );
        let mut g = Graph::new(&model.store);
        let v = loss_vars(&model, &mut g, &refs).unwrap();
        g.backward(v.total).unwrap();
        let id = model.store.lookup("sdd.phi.fwd.w_ih").unwrap();
        g.param_grads()[id.index()].clone().unwrap()
    };
    let (one, two) = (grads_for(1.0), grads_for(2.0));
    for (a, b) in one.data().iter().zip(two.data()) {
        assert!((2.0 * a - b).abs() <= 1e-12 * a.abs().max(1.0));
    }
}

/// Scorer with fixed probabilities per prefix.
struct Table<F: Fn(&[usize]) -> Vec<f64>>(F);

impl<F: Fn(&[usize]) -> Vec<f64>> StepScorer for Table<F> {
    fn next_log_probs(&mut self, prefix: &[usize]) -> adc_core::Result<Vec<f64>> {
        Ok((self.0)(prefix).into_iter().map(f64::ln).collect())
    }
}

/// All finished sequences over `vocab` tokens up to `max_len`.
fn enumerate(vocab: usize, max_len: usize, eos: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut stack = vec![Vec::new()];
    while let Some(p) = stack.pop() {
        for t in 0..vocab {
            let mut q = p.clone();
            q.push(t);
            if t == eos || q.len() == max_len {
                out.push(q);
            } else {
                stack.push(q);
            }
        }
    }
    out
}

fn sequence_log_prob(probs: &impl Fn(&[usize]) -> Vec<f64>, seq: &[usize]) -> f64 {
    (0..seq.len()).map(|i| probs(&seq[..i])[seq[i]].ln()).sum()
}

#[test]
fn width_two_finds_the_exhaustive_optimum_where_greedy_fails() {
    // token 0 ends the sequence; greedy takes 1 first and is stuck with a
    // flat continuation, while 2 leads to a near-certain ending
    let probs = |p: &[usize]| match p {
        [] => vec![0.1, 0.5, 0.4],
        [1] => vec![0.34, 0.33, 0.33],
        [2] => vec![0.95, 0.03, 0.02],
        _ => vec![0.6, 0.2, 0.2],
    };
    let cfg = |w| BeamConfig {
        width: w,
        max_len: 3,
        eos: 0,
        banned: vec![],
    };
    let all = enumerate(3, 3, 0);
    let best_total = all
        .iter()
        .max_by(|a, b| sequence_log_prob(&probs, a).total_cmp(&sequence_log_prob(&probs, b)))
        .unwrap();
    let best_norm = all
        .iter()
        .max_by(|a, b| {
            let s = |q: &Vec<usize>| sequence_log_prob(&probs, q) / q.len() as f64;
            s(a).total_cmp(&s(b))
        })
        .unwrap();
    assert_eq!(best_total, &vec![2, 0]);
    assert_eq!(best_norm, &vec![2, 0]);
    let greedy = greedy_decode(&mut Table(probs), &cfg(1)).unwrap();
    assert_eq!(greedy.token_ids, vec![1, 0]);
    let beam = beam_search(&mut Table(probs), &cfg(2)).unwrap();
    assert_eq!(&beam.token_ids, best_total);
    assert!((beam.log_prob - sequence_log_prob(&probs, best_total)).abs() < 1e-12);
}

fn random_table(seed: u64) -> impl Fn(&[usize]) -> Vec<f64> {
    move |p: &[usize]| {
        let mut h = seed;
        for &t in p {
            h = h
                .wrapping_mul(6364136223846793005)
                .wrapping_add(t as u64 + 1);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(h);
        let raw: Vec<f64> = (0..4)
            .map(|_| rand::Rng::random_range(&mut rng, 0.05..1.0))
            .collect();
        let s: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / s).collect()
    }
}

#[test]
fn full_width_beam_is_exhaustive() {
    for seed in 0..200 {
        let probs = random_table(seed);
        let cfg = BeamConfig {
            width: 64,
            max_len: 3,
            eos: 0,
            banned: vec![],
        };
        let beam = beam_search(&mut Table(&probs), &cfg).unwrap();
        let best = enumerate(4, 3, 0)
            .into_iter()
            .map(|q| sequence_log_prob(&probs, &q) / q.len() as f64)
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(
            (beam.normalized_score() - best).abs() < 1e-12,
            "seed {seed}"
        );
    }
}

/// Wider beams can lose to narrower ones on adversarial tables because
/// pruning uses cumulative log-probability; count how often on random tables.
#[test]
fn wider_beams_rarely_lose() {
    let mut worse = 0;
    let total = 500;
    for seed in 0..total {
        let probs = random_table(seed);
        let run = |w| {
            let cfg = BeamConfig {
                width: w,
                max_len: 4,
                eos: 0,
                banned: vec![],
            };
            beam_search(&mut Table(&probs), &cfg)
                .unwrap()
                .normalized_score()
        };
        let (narrow, wide) = (run(2), run(4));
        if wide < narrow - 1e-12 {
            worse += 1;
        }
    }
    println!("width 4 below width 2 on {worse}/{total} random tables");
    assert!(worse * 10 < total);
}

#[test]
fn cross_only_blocks_have_expected_boundaries() {
    let b = BlockBounds::new(3, 2).unwrap();
    assert_eq!(
        (b.token_x(), b.clip_x(), b.token_y(), b.clip_y()),
        (0, 1..4, 4, 5..7)
    );
}

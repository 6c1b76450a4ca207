use adc_core::numcore::{BlockBounds, Tensor};
use adc_core::sddloss::{pair_cos_sim, split_parts, sym_info_nce};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn random(rows: usize, cols: usize, seed: u64) -> Tensor {
    Tensor::normal(&[rows, cols], 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn permute_rows(t: &Tensor, perm: &[usize]) -> Tensor {
    let rows: Vec<Vec<f64>> = perm.iter().map(|&i| t.row(i).to_vec()).collect();
    Tensor::from_rows(&rows).unwrap()
}

fn scale_rows(t: &Tensor, scales: &[f64]) -> Tensor {
    let rows: Vec<Vec<f64>> = (0..t.rows())
        .map(|i| t.row(i).iter().map(|v| v * scales[i]).collect())
        .collect();
    Tensor::from_rows(&rows).unwrap()
}

fn shuffled(n: usize, seed: u64) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    p
}

proptest! {
    #[test]
    fn split_then_concatenate_is_identity(half in 1usize..8, t_x in 1usize..6, t_y in 1usize..6, seed: u64) {
        let b = BlockBounds::new(t_x, t_y).unwrap();
        let z = random(2 * half, b.len(), seed);
        let p = split_parts(&z, b).unwrap();
        let mut stacked = p.similar.data().to_vec();
        stacked.extend_from_slice(p.discrepant.data());
        prop_assert_eq!(stacked.as_slice(), z.data());
        for (part, whole) in [(&p.x_similar, &p.similar), (&p.x_discrepant, &p.discrepant)] {
            for r in 0..half {
                prop_assert_eq!(part.row(r), &whole.row(r)[b.x_block()]);
            }
        }
        for (part, whole) in [(&p.y_similar, &p.similar), (&p.y_discrepant, &p.discrepant)] {
            for r in 0..half {
                prop_assert_eq!(part.row(r), &whole.row(r)[b.y_block()]);
            }
        }
    }

    #[test]
    fn info_nce_is_symmetric(n in 1usize..6, e in 2usize..6, seed: u64) {
        let (a, b) = (random(n, e, seed), random(n, e, seed ^ 1));
        let ab = sym_info_nce(&a, &b, 0.07).unwrap();
        let ba = sym_info_nce(&b, &a, 0.07).unwrap();
        prop_assert!((ab - ba).abs() <= 1e-12 * ab.abs().max(1.0));
    }

    #[test]
    fn info_nce_ignores_row_scale(n in 1usize..6, e in 2usize..6, seed: u64, s in prop::collection::vec(0.01f64..100.0, 12)) {
        let (a, b) = (random(n, e, seed), random(n, e, seed ^ 1));
        let base = sym_info_nce(&a, &b, 0.5).unwrap();
        let scaled = sym_info_nce(&scale_rows(&a, &s[..n]), &scale_rows(&b, &s[6..6 + n]), 0.5).unwrap();
        prop_assert!((base - scaled).abs() <= 1e-9 * base.abs().max(1.0));
    }

    /// Rotating one matched embedding towards its partner, with every other
    /// logit held fixed, lowers the loss.
    #[test]
    fn info_nce_falls_as_matched_cosine_rises(n in 2usize..6, seed: u64, t1 in 0.05f64..1.5, t2 in 0.05f64..1.5) {
        prop_assume!((t1 - t2).abs() > 1e-3);
        let dim = n + 1;
        let a = Tensor::from_fn(&[n, dim], |k| if k / dim == k % dim { 1.0 } else { 0.0 });
        let others = random(n, dim, seed);
        let b_at = |theta: f64| {
            let mut rows: Vec<Vec<f64>> = (0..n).map(|i| others.row(i).to_vec()).collect();
            rows[0] = vec![0.0; dim];
            rows[0][0] = theta.cos();
            rows[0][n] = theta.sin();
            Tensor::from_rows(&rows).unwrap()
        };
        let (near, far) = (t1.min(t2), t1.max(t2));
        let l_near = sym_info_nce(&a, &b_at(near), 0.07).unwrap();
        let l_far = sym_info_nce(&a, &b_at(far), 0.07).unwrap();
        prop_assert!(l_near < l_far);
    }

    #[test]
    fn cosine_is_bounded_and_permutation_invariant(n in 1usize..7, e in 1usize..6, seed: u64, pseed: u64) {
        let (a, b) = (random(n, e, seed), random(n, e, seed ^ 1));
        let c = pair_cos_sim(&a, &b).unwrap();
        prop_assert!((-1.0..=1.0).contains(&c));
        let p = shuffled(n, pseed);
        let cp = pair_cos_sim(&permute_rows(&a, &p), &permute_rows(&b, &p)).unwrap();
        prop_assert!((c - cp).abs() < 1e-12);
    }
}

#[test]
fn closed_forms() {
    let a = Tensor::from_rows(&[vec![1.0, 0.0]]).unwrap();
    assert_eq!(sym_info_nce(&a, &a, 0.07).unwrap(), 0.0);
    for n in 1..6 {
        let same = Tensor::full(&[n, 3], 1.0);
        assert!((sym_info_nce(&same, &same, 0.07).unwrap() - (n as f64).ln()).abs() < 1e-9);
    }
    let e = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
    let expected = (1.0 + (-1.0f64 / 0.07).exp()).ln();
    assert!((sym_info_nce(&e, &e, 0.07).unwrap() - expected).abs() < 1e-12);
}

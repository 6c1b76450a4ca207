use adc_core::capmetrics::{bleu, cider_d, cider_d_items, exact_match, rouge_l, EvalItem};
use proptest::prelude::*;

fn sentence() -> impl Strategy<Value = Vec<u8>> {
    prop::collection::vec(0u8..6, 1..9)
}

fn item() -> impl Strategy<Value = EvalItem<u8>> {
    (sentence(), prop::collection::vec(sentence(), 1..4)).prop_map(|(c, r)| EvalItem::new(c, r))
}

fn corpus() -> impl Strategy<Value = Vec<EvalItem<u8>>> {
    prop::collection::vec(item(), 2..6)
}

fn relabel(corpus: &[EvalItem<u8>], map: &[u32]) -> Vec<EvalItem<u32>> {
    let m = |s: &Vec<u8>| s.iter().map(|&t| map[t as usize]).collect::<Vec<u32>>();
    corpus
        .iter()
        .map(|it| EvalItem::new(m(&it.candidate), it.references.iter().map(m).collect()))
        .collect()
}

fn all_scores<T: Ord + Clone>(c: &[EvalItem<T>]) -> [f64; 5] {
    [
        bleu(c, 1).unwrap(),
        bleu(c, 4).unwrap(),
        rouge_l(c).unwrap(),
        cider_d(c).unwrap(),
        exact_match(c).unwrap(),
    ]
}

proptest! {
    #[test]
    fn relabeling_tokens_changes_nothing(c in corpus(), perm in Just((0u32..6).collect::<Vec<_>>()).prop_shuffle(), offset in 0u32..1000) {
        let map: Vec<u32> = perm.iter().map(|p| p * 7 + offset).collect();
        let a = all_scores(&c);
        let b = all_scores(&relabel(&c, &map));
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-12, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn bleu4_never_exceeds_bleu1(c in corpus()) {
        prop_assert!(bleu(&c, 4).unwrap() <= bleu(&c, 1).unwrap() + 1e-15);
    }

    #[test]
    fn duplicate_reference_never_lowers_rouge(c in corpus(), which in 0usize..6) {
        let base = rouge_l(&c).unwrap();
        let mut dup = c.clone();
        let k = which % dup.len();
        let r = dup[k].references[0].clone();
        dup[k].references.push(r);
        prop_assert!(rouge_l(&dup).unwrap() >= base - 1e-15);
    }

    #[test]
    fn metrics_are_pure(c in corpus()) {
        prop_assert_eq!(all_scores(&c), all_scores(&c));
        prop_assert_eq!(cider_d_items(&c).unwrap(), cider_d_items(&c).unwrap());
    }

    #[test]
    fn scores_lie_in_range(c in corpus()) {
        let [b1, b4, r, _, e] = all_scores(&c);
        for v in [b1, b4, r, e] {
            prop_assert!((0.0..=1.0 + 1e-12).contains(&v));
        }
        for v in cider_d_items(&c).unwrap() {
            prop_assert!(v >= 0.0);
        }
    }

    /// A perfect item's CIDEr-D never drops when another item joins the corpus.
    #[test]
    fn perfect_item_keeps_its_score_when_corpus_grows(c in corpus(), extra in sentence()) {
        let mut base = c.clone();
        base[0].candidate = base[0].references[0].clone();
        base[0].references.truncate(1);
        let before = cider_d_items(&base).unwrap()[0];
        base.push(EvalItem::new(extra.clone(), vec![extra]));
        let after = cider_d_items(&base).unwrap()[0];
        prop_assert!(after >= before - 1e-12, "{before} -> {after}");
    }
}

#[test]
fn identical_corpus_scores_one() {
    let c = vec![
        EvalItem::new(vec!["a", "b", "c", "d"], vec![vec!["a", "b", "c", "d"]]),
        EvalItem::new(
            vec!["e", "f", "g", "h", "i"],
            vec![vec!["e", "f", "g", "h", "i"]],
        ),
    ];
    assert_eq!(bleu(&c, 1).unwrap(), 1.0);
    assert_eq!(bleu(&c, 4).unwrap(), 1.0);
    assert_eq!(rouge_l(&c).unwrap(), 1.0);
    assert_eq!(exact_match(&c).unwrap(), 1.0);
}

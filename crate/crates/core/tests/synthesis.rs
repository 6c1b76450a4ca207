use std::fs;

use adc_core::pairsynth::spec::DEV_INSTANCES;
use adc_core::pairsynth::{
    build_dataset, clip_energy, load_manifest, pair_spec, DatasetConfig, DifferenceType, Direction,
    PairSpec, Split, SynthConfig, Vocabulary, BANDS, FRAMES, UNK,
};
use proptest::prelude::*;

fn neutralized(spec: &PairSpec) -> PairSpec {
    let mut s = spec.clone();
    s.bg_gain_db[1] = s.bg_gain_db[0];
    for ev in &mut s.events {
        ev.gain_db[1] = ev.gain_db[0];
        ev.present[1] = ev.present[0];
    }
    // an added event is present only in clip 1
    for (ev, orig) in s.events.iter_mut().zip(&spec.events) {
        if !orig.present[0] {
            ev.present = [true, true];
            ev.gain_db[0] = orig.gain_db[1];
        }
    }
    s
}

fn differing_aspects(spec: &PairSpec) -> usize {
    usize::from(spec.bg_gain_db[0] != spec.bg_gain_db[1])
        + spec
            .events
            .iter()
            .filter(|e| {
                e.present[0] != e.present[1] || (e.present[0] && e.gain_db[0] != e.gain_db[1])
            })
            .count()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn clips_differ_in_exactly_one_aspect(seed: u64, index in 0usize..10_000, eval: bool) {
        let split = if eval { Split::Eval } else { Split::Dev };
        let spec = pair_spec(seed, split, index, FRAMES);
        prop_assert!(spec.validate(FRAMES).is_ok());
        prop_assert_eq!(differing_aspects(&spec), 1);
        prop_assert!(spec.events.len() <= 2);
        let cfg = SynthConfig::default();
        let x = clip_energy(&spec, 0, &cfg).unwrap();
        let y = clip_energy(&spec, 1, &cfg).unwrap();
        prop_assert_ne!(x.data(), y.data());
        let n = neutralized(&spec);
        let x = clip_energy(&n, 0, &cfg).unwrap();
        let y = clip_energy(&n, 1, &cfg).unwrap();
        prop_assert_eq!(x.data(), y.data());
    }

    #[test]
    fn instance_pools_are_disjoint(seed: u64, index in 0usize..10_000) {
        for ev in pair_spec(seed, Split::Dev, index, FRAMES).events {
            prop_assert!(ev.instance < DEV_INSTANCES);
        }
        for ev in pair_spec(seed, Split::Eval, index, FRAMES).events {
            prop_assert!(ev.instance >= DEV_INSTANCES);
        }
    }

    #[test]
    fn larger_gain_gives_larger_energy_change(seed: u64, index in 0usize..10_000, small in 0usize..3) {
        let mut spec = pair_spec(seed, Split::Dev, index, FRAMES);
        prop_assume!(spec.difference != DifferenceType::EventPresence);
        let sign = if spec.direction == Direction::Increase { 1.0 } else { -1.0 };
        let deltas = [3.0, 6.0, 9.0, 12.0];
        let cfg = SynthConfig::default();
        let mut change = |delta: f64| {
            let frames = match spec.target_event {
                Some(t) => {
                    let ev = &mut spec.events[t];
                    ev.gain_db[1] = ev.gain_db[0] + sign * delta;
                    ev.onset..ev.onset + ev.duration
                }
                None => {
                    spec.bg_gain_db[1] = spec.bg_gain_db[0] + sign * delta;
                    0..FRAMES
                }
            };
            let x = clip_energy(&spec, 0, &cfg).unwrap();
            let y = clip_energy(&spec, 1, &cfg).unwrap();
            let mut total = 0.0;
            for f in 0..BANDS {
                for t in frames.clone() {
                    total += y.at(f, t) - x.at(f, t);
                }
            }
            sign * total / (BANDS * frames.len()) as f64
        };
        let a = change(deltas[small]);
        let b = change(deltas[small + 1]);
        prop_assert!(a > 0.0 && b > a, "{a} vs {b}");
    }
}

#[test]
fn zero_delta_is_rejected() {
    let mut spec = pair_spec(0, Split::Dev, 0, FRAMES);
    spec = neutralized(&spec);
    let err = spec.validate(FRAMES).unwrap_err();
    assert_eq!(err.to_string(), "no difference specified");
}

#[test]
fn difference_types_are_balanced() {
    let n = 2000;
    let mut counts = [0usize; 3];
    for i in 0..n {
        let spec = pair_spec(0, Split::Dev, i, FRAMES);
        counts[DifferenceType::ALL
            .iter()
            .position(|&d| d == spec.difference)
            .unwrap()] += 1;
    }
    let expected = n as f64 / 3.0;
    for c in counts {
        assert!((c as f64 - expected).abs() <= 0.1 * expected, "{counts:?}");
    }
}

#[test]
fn dataset_is_byte_identical_across_runs_and_parses_without_unknowns() {
    let cfg = DatasetConfig {
        n_dev: 60,
        n_eval: 20,
        seed: 11,
        ..Default::default()
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    build_dataset(a.path(), &cfg).unwrap();
    build_dataset(b.path(), &cfg).unwrap();
    let mut names: Vec<_> = fs::read_dir(a.path())
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    assert_eq!(names.len(), 5);
    for name in &names {
        assert_eq!(
            fs::read(a.path().join(name)).unwrap(),
            fs::read(b.path().join(name)).unwrap(),
            "{name:?}"
        );
    }
    let vocab = Vocabulary::load(&a.path().join("vocab.txt")).unwrap();
    assert_eq!(vocab, Vocabulary::from_templates());
    for (file, n, caps) in [("dev.jsonl", 60, 1..=5), ("eval.jsonl", 20, 5..=5)] {
        let pairs = load_manifest(&a.path().join(file)).unwrap();
        assert_eq!(pairs.len(), n);
        for p in pairs {
            assert!(caps.contains(&p.captions.len()));
            assert_eq!(p.features_x.shape(), p.features_y.shape());
            assert_eq!(p.features_x.shape(), &[BANDS, FRAMES]);
            for c in &p.captions {
                assert!(!c.is_empty());
                assert!(!vocab.tokenize(c).contains(&UNK), "{c}");
            }
        }
    }
}

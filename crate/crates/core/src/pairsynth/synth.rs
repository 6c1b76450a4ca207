use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::numcore::Tensor;
use crate::pairsynth::captions::render_captions;
use crate::pairsynth::spec::{
    Background, DifferenceType, Direction, EventClass, EventSpec, PairSpec, Split, BANDS, FRAMES,
    GAIN_DELTAS_DB, MAX_EVENTS,
};

/// Seed of the class signatures and their instances. Fixed so that every
/// dataset shares the same sound classes.
const SIGNATURE_SEED: u64 = 0x51_6E_A7_0C;
const BACKGROUND_LEVEL: f64 = 0.3;
const ENERGY_FLOOR: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SynthConfig {
    pub frames: usize,
    pub bands: usize,
    /// Standard deviation of the Gaussian noise added to log energies.
    pub noise_std: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            frames: FRAMES,
            bands: BANDS,
            noise_std: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CaptionedPair {
    pub features_x: Tensor,
    pub features_y: Tensor,
    pub captions: Vec<String>,
    pub spec: PairSpec,
}

pub fn db_to_amplitude(db: f64) -> f64 {
    10f64.powf(db / 20.0)
}

fn mix(a: u64, b: u64) -> u64 {
    // splitmix64 finalizer over the combined words
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn bump(f: f64, center: f64, width: f64) -> f64 {
    let d = (f - center) / width;
    (-0.5 * d * d).exp()
}

fn normalized(mut v: Vec<f64>) -> Vec<f64> {
    let max = v.iter().copied().fold(0.0, f64::max);
    v.iter_mut().for_each(|x| *x /= max);
    v
}

/// Smooth band profile of a background class, peak 1.
pub fn background_signature(bg: Background, bands: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(SIGNATURE_SEED, 100 + bg.index() as u64));
    let n = bands as f64;
    // rain is bright and broadband, traffic sits low
    let (lo, hi) = match bg {
        Background::Rain => (0.45, 0.9),
        Background::CarPassingBy => (0.05, 0.35),
    };
    let bumps: Vec<(f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                rng.random_range(lo * n..hi * n),
                rng.random_range(0.12 * n..0.3 * n),
                rng.random_range(0.5..1.0),
            )
        })
        .collect();
    normalized(
        (0..bands)
            .map(|f| {
                0.05 + bumps
                    .iter()
                    .map(|&(c, w, a)| a * bump(f as f64, c, w))
                    .sum::<f64>()
            })
            .collect(),
    )
}

/// Smooth band profile of an event class, peak 1. Primary resonances are
/// spread over the band axis so that classes stay separable.
pub fn event_signature(ev: EventClass, bands: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(SIGNATURE_SEED, ev.index() as u64));
    let n = bands as f64;
    let slot = n / EventClass::ALL.len() as f64;
    let primary = (ev.index() as f64 + 0.5) * slot + rng.random_range(-0.2 * slot..0.2 * slot);
    let secondary = rng.random_range(0.0..n);
    let w1 = rng.random_range(0.03 * n..0.07 * n);
    let w2 = rng.random_range(0.03 * n..0.1 * n);
    let a2 = rng.random_range(0.2..0.5);
    normalized(
        (0..bands)
            .map(|f| {
                let f = f as f64;
                0.02 + bump(f, primary, w1) + a2 * bump(f, secondary, w2)
            })
            .collect(),
    )
}

/// One recorded instance of an event class: the class signature shifted by
/// up to two bands and modulated by smooth random gain.
pub fn instance_signature(ev: EventClass, instance: usize, bands: usize) -> Vec<f64> {
    let base = event_signature(ev, bands);
    let mut rng = ChaCha8Rng::seed_from_u64(mix(
        mix(SIGNATURE_SEED, ev.index() as u64),
        1000 + instance as u64,
    ));
    let shift: i64 = rng.random_range(-2..=2);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let raw: Vec<f64> = (0..bands).map(|_| normal.sample(&mut rng)).collect();
    (0..bands)
        .map(|f| {
            let lo = f.saturating_sub(2);
            let hi = (f + 3).min(bands);
            let smooth = raw[lo..hi].iter().sum::<f64>() / (hi - lo) as f64;
            let src = (f as i64 - shift).clamp(0, bands as i64 - 1) as usize;
            base[src] * (0.25 * smooth).exp()
        })
        .collect()
}

/// Temporal envelope of an event at frame `k` after its onset.
pub fn event_envelope(ev: EventClass, k: usize, duration: usize) -> f64 {
    match ev {
        EventClass::Dog => {
            if k % 5 < 2 {
                1.0
            } else {
                0.15
            }
        }
        EventClass::ChirpingBird => {
            if k.is_multiple_of(3) {
                1.0
            } else {
                0.3
            }
        }
        EventClass::Thunder => 0.2 + 0.8 * (-(k as f64) / (duration as f64 / 2.0).max(1.0)).exp(),
        EventClass::Footsteps => {
            if k.is_multiple_of(4) {
                1.0
            } else {
                0.1
            }
        }
        EventClass::CarHorn => 1.0,
        EventClass::ChurchBells => 0.25 + 0.75 * (-((k % 10) as f64) / 4.0).exp(),
    }
}

fn background_envelope(bg: Background, t: usize, frames: usize) -> f64 {
    match bg {
        Background::Rain => 1.0,
        Background::CarPassingBy => {
            let mid = frames as f64 / 2.0;
            let d = (t as f64 - mid) / (frames as f64 / 4.0);
            0.4 + 0.6 * (-d * d).exp()
        }
    }
}

/// Noiseless linear band energy `[bands × frames]` of clip 0 or 1.
pub fn clip_energy(spec: &PairSpec, clip: usize, cfg: &SynthConfig) -> Result<Tensor> {
    if clip > 1 {
        return Err(Error::Invalid(format!(
            "clip index {clip}, expected 0 or 1"
        )));
    }
    let (f_n, t_n) = (cfg.bands, cfg.frames);
    let mut e = vec![0.0; f_n * t_n];
    let bg_sig = background_signature(spec.background, f_n);
    let bg_gain = BACKGROUND_LEVEL * db_to_amplitude(spec.bg_gain_db[clip]);
    for t in 0..t_n {
        let env = background_envelope(spec.background, t, t_n);
        for f in 0..f_n {
            e[f * t_n + t] = bg_gain * env * bg_sig[f];
        }
    }
    for ev in spec.events.iter().filter(|ev| ev.present[clip]) {
        let sig = instance_signature(ev.class, ev.instance, f_n);
        let gain = db_to_amplitude(ev.gain_db[clip]);
        for k in 0..ev.duration {
            let t = ev.onset + k;
            let env = gain * event_envelope(ev.class, k, ev.duration);
            for f in 0..f_n {
                e[f * t_n + t] += env * sig[f];
            }
        }
    }
    Tensor::new(&[f_n, t_n], e)
}

/// Log band energies of one clip, plus Gaussian noise seeded from the spec
/// seed and the clip index.
pub fn clip_features(spec: &PairSpec, clip: usize, cfg: &SynthConfig) -> Result<Tensor> {
    let energy = clip_energy(spec, clip, cfg)?;
    let mut data: Vec<f64> = energy
        .data()
        .iter()
        .map(|v| (v + ENERGY_FLOOR).ln())
        .collect();
    if cfg.noise_std > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(spec.seed, clip as u64 + 1));
        let normal = Normal::new(0.0, cfg.noise_std).map_err(|e| Error::Invalid(e.to_string()))?;
        data.iter_mut().for_each(|v| *v += normal.sample(&mut rng));
    }
    Tensor::new(&[cfg.bands, cfg.frames], data)
}

pub fn synth_pair(spec: PairSpec) -> Result<CaptionedPair> {
    synth_pair_with(spec, &SynthConfig::default())
}

pub fn synth_pair_with(spec: PairSpec, cfg: &SynthConfig) -> Result<CaptionedPair> {
    spec.validate(cfg.frames)?;
    let features_x = clip_features(&spec, 0, cfg)?;
    let features_y = clip_features(&spec, 1, cfg)?;
    let captions = render_captions(&spec, spec.caption_count)?;
    Ok(CaptionedPair {
        features_x,
        features_y,
        captions,
        spec,
    })
}

fn random_event(rng: &mut ChaCha8Rng, class: EventClass, split: Split, frames: usize) -> EventSpec {
    let duration = rng.random_range(10..=40).min(frames);
    let onset = rng.random_range(0..=frames - duration);
    let gain = (rng.random_range(-3.0f64..3.0) * 10.0).round() / 10.0;
    EventSpec {
        class,
        instance: rng.random_range(split.instances()),
        onset,
        duration,
        gain_db: [gain, gain],
        present: [true, true],
    }
}

/// Draws a valid spec. Difference type, direction and classes are uniform;
/// development pairs carry 1 to 5 captions, evaluation pairs exactly 5.
pub fn sample_spec(rng: &mut ChaCha8Rng, split: Split, frames: usize) -> PairSpec {
    let difference = DifferenceType::ALL[rng.random_range(0..3)];
    let direction = if rng.random_bool(0.5) {
        Direction::Increase
    } else {
        Direction::Decrease
    };
    let background = Background::ALL[rng.random_range(0..Background::ALL.len())];
    let bg = (rng.random_range(-6.0f64..0.0) * 10.0).round() / 10.0;
    let min_events = usize::from(difference != DifferenceType::BgLevel);
    let n_events = rng.random_range(min_events..=MAX_EVENTS);
    let mut classes = EventClass::ALL.to_vec();
    let mut events = Vec::with_capacity(n_events);
    for _ in 0..n_events {
        let class = classes.swap_remove(rng.random_range(0..classes.len()));
        events.push(random_event(rng, class, split, frames));
    }
    let delta = GAIN_DELTAS_DB[rng.random_range(0..GAIN_DELTAS_DB.len())];
    let signed = match direction {
        Direction::Increase => delta,
        Direction::Decrease => -delta,
    };
    let mut bg_gain_db = [bg, bg];
    let mut target_event = None;
    match difference {
        DifferenceType::BgLevel => bg_gain_db[1] = bg + signed,
        DifferenceType::EventLevel => {
            let t = rng.random_range(0..n_events);
            events[t].gain_db[1] = events[t].gain_db[0] + signed;
            target_event = Some(t);
        }
        DifferenceType::EventPresence => {
            let t = rng.random_range(0..n_events);
            let absent = usize::from(direction == Direction::Decrease);
            events[t].present[1 - absent] = true;
            events[t].present[absent] = false;
            target_event = Some(t);
        }
    }
    let caption_count = match split {
        Split::Dev => rng.random_range(1..=5),
        Split::Eval => 5,
    };
    PairSpec {
        background,
        bg_gain_db,
        events,
        difference,
        direction,
        target_event,
        caption_count,
        seed: rng.random(),
    }
}

/// Spec of pair `index` of a split, independent of every other pair.
pub fn pair_spec(seed: u64, split: Split, index: usize, frames: usize) -> PairSpec {
    let split_word = match split {
        Split::Dev => 1,
        Split::Eval => 2,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(mix(mix(seed, split_word), index as u64));
    sample_spec(&mut rng, split, frames)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    fn rain_louder() -> PairSpec {
        PairSpec {
            background: Background::Rain,
            bg_gain_db: [-3.0, 3.0],
            events: vec![],
            difference: DifferenceType::BgLevel,
            direction: Direction::Increase,
            target_event: None,
            caption_count: 5,
            seed: 7,
        }
    }

    #[test]
    fn rain_louder_caption() {
        let p = synth_pair(rain_louder()).unwrap();
        assert_eq!(p.captions[0], "make the rain louder");
        assert_eq!(p.features_x.shape(), &[BANDS, FRAMES]);
        assert_eq!(p.features_y.shape(), &[BANDS, FRAMES]);
    }

    #[test]
    fn added_dog_caption() {
        let spec = PairSpec {
            events: vec![EventSpec {
                class: EventClass::Dog,
                instance: 3,
                onset: 20,
                duration: 30,
                gain_db: [0.0, 0.0],
                present: [false, true],
            }],
            bg_gain_db: [-3.0, -3.0],
            difference: DifferenceType::EventPresence,
            target_event: Some(0),
            ..rain_louder()
        };
        let p = synth_pair(spec).unwrap();
        assert_eq!(p.captions[0], "add the sound of a dog");
    }

    #[test]
    fn zero_delta_is_rejected() {
        let spec = PairSpec {
            bg_gain_db: [-3.0, -3.0],
            ..rain_louder()
        };
        let err = synth_pair(spec).unwrap_err();
        assert!(matches!(err, Error::NoDifference));
        assert_eq!(err.to_string(), "no difference specified");
    }

    #[test]
    fn event_outside_clip_is_rejected() {
        let mut spec = rain_louder();
        spec.events.push(EventSpec {
            class: EventClass::Thunder,
            instance: 0,
            onset: 90,
            duration: 20,
            gain_db: [0.0, 0.0],
            present: [true, true],
        });
        assert!(matches!(synth_pair(spec), Err(Error::Invalid(_))));
    }

    #[test]
    fn wrong_direction_is_rejected() {
        let spec = PairSpec {
            direction: Direction::Decrease,
            ..rain_louder()
        };
        assert!(synth_pair(spec).is_err());
    }

    #[test]
    fn deterministic_given_seed() {
        let a = synth_pair(rain_louder()).unwrap();
        let b = synth_pair(rain_louder()).unwrap();
        assert_eq!(a, b);
        let c = synth_pair(PairSpec {
            seed: 8,
            ..rain_louder()
        })
        .unwrap();
        assert_ne!(a.features_x, c.features_x);
    }

    #[test]
    fn sampled_specs_are_valid() {
        for i in 0..300 {
            let s = pair_spec(
                11,
                if i % 2 == 0 { Split::Dev } else { Split::Eval },
                i,
                FRAMES,
            );
            s.validate(FRAMES).unwrap();
        }
    }

    #[test]
    fn signatures_are_positive_with_unit_peak() {
        for ev in EventClass::ALL {
            let s = event_signature(ev, BANDS);
            assert!(s.iter().all(|&v| v > 0.0));
            assert!((s.iter().copied().fold(0.0, f64::max) - 1.0).abs() < 1e-12);
        }
        assert_ne!(
            instance_signature(EventClass::Dog, 0, BANDS),
            instance_signature(EventClass::Dog, 1, BANDS)
        );
    }
}

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Frames per clip: ten seconds at ten frames per second.
pub const FRAMES: usize = 100;
/// Feature bands per frame.
pub const BANDS: usize = 64;
/// Event instances per class in the development pool; the evaluation pool
/// holds the next [`EVAL_INSTANCES`].
pub const DEV_INSTANCES: usize = 32;
pub const EVAL_INSTANCES: usize = 8;
pub const MAX_EVENTS: usize = 2;
/// Level changes are drawn from these magnitudes.
pub const GAIN_DELTAS_DB: [f64; 4] = [3.0, 6.0, 9.0, 12.0];

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Background {
    Rain,
    CarPassingBy,
}

impl Background {
    pub const ALL: [Background; 2] = [Background::Rain, Background::CarPassingBy];

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventClass {
    Dog,
    ChirpingBird,
    Thunder,
    Footsteps,
    CarHorn,
    ChurchBells,
}

impl EventClass {
    pub const ALL: [EventClass; 6] = [
        EventClass::Dog,
        EventClass::ChirpingBird,
        EventClass::Thunder,
        EventClass::Footsteps,
        EventClass::CarHorn,
        EventClass::ChurchBells,
    ];

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Anything a caption can talk about.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SoundClass {
    Background(Background),
    Event(EventClass),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DifferenceType {
    BgLevel,
    EventLevel,
    EventPresence,
}

impl DifferenceType {
    pub const ALL: [DifferenceType; 3] = [
        DifferenceType::BgLevel,
        DifferenceType::EventLevel,
        DifferenceType::EventPresence,
    ];
}

impl fmt::Display for DifferenceType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DifferenceType::BgLevel => "bg_level",
            DifferenceType::EventLevel => "event_level",
            DifferenceType::EventPresence => "event_presence",
        })
    }
}

/// `Increase` means louder or added in the second clip.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Increase,
    Decrease,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Dev,
    Eval,
}

impl Split {
    /// Global instance indices available to this split.
    pub fn instances(self) -> std::ops::Range<usize> {
        match self {
            Split::Dev => 0..DEV_INSTANCES,
            Split::Eval => DEV_INSTANCES..DEV_INSTANCES + EVAL_INSTANCES,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Split::Dev => "dev",
            Split::Eval => "eval",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventSpec {
    pub class: EventClass,
    /// Global instance index (see [`Split::instances`]).
    pub instance: usize,
    pub onset: usize,
    pub duration: usize,
    /// Per clip gain in dB.
    pub gain_db: [f64; 2],
    /// Per clip presence.
    pub present: [bool; 2],
}

/// Generation parameters of one pair. Exactly one aspect differs between
/// the clips.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairSpec {
    pub background: Background,
    pub bg_gain_db: [f64; 2],
    pub events: Vec<EventSpec>,
    pub difference: DifferenceType,
    pub direction: Direction,
    /// Index into `events` of the event that changes, for event differences.
    pub target_event: Option<usize>,
    pub caption_count: usize,
    /// Seed of the per-clip noise draws.
    pub seed: u64,
}

fn sign_matches(delta: f64, direction: Direction) -> bool {
    match direction {
        Direction::Increase => delta > 0.0,
        Direction::Decrease => delta < 0.0,
    }
}

impl PairSpec {
    /// The class the caption refers to.
    pub fn subject(&self) -> Result<SoundClass> {
        match self.difference {
            DifferenceType::BgLevel => Ok(SoundClass::Background(self.background)),
            _ => {
                let idx = self.target_event.ok_or_else(|| {
                    Error::Invalid("event difference without a target event".into())
                })?;
                let ev = self
                    .events
                    .get(idx)
                    .ok_or_else(|| Error::Invalid(format!("target event {idx} does not exist")))?;
                Ok(SoundClass::Event(ev.class))
            }
        }
    }

    fn same_event_in_both(ev: &EventSpec) -> bool {
        ev.present[0] == ev.present[1] && (!ev.present[0] || ev.gain_db[0] == ev.gain_db[1])
    }

    /// Checks clip bounds, event limits and that the clips differ in exactly
    /// the declared aspect, in the declared direction.
    pub fn validate(&self, frames: usize) -> Result<()> {
        if self.events.len() > MAX_EVENTS {
            return Err(Error::Invalid(format!(
                "{} events, at most {MAX_EVENTS}",
                self.events.len()
            )));
        }
        for (i, ev) in self.events.iter().enumerate() {
            if ev.duration == 0 || ev.onset + ev.duration > frames {
                return Err(Error::Invalid(format!(
                    "event {i} spans frames {}..{} outside a {frames}-frame clip",
                    ev.onset,
                    ev.onset + ev.duration
                )));
            }
            if self.events[..i].iter().any(|o| o.class == ev.class) {
                return Err(Error::Invalid(format!(
                    "event class {:?} appears twice",
                    ev.class
                )));
            }
            if !ev.present[0] && !ev.present[1] {
                return Err(Error::Invalid(format!(
                    "event {i} is absent from both clips"
                )));
            }
            if ev.instance >= DEV_INSTANCES + EVAL_INSTANCES {
                return Err(Error::Invalid(format!(
                    "event instance {} out of range",
                    ev.instance
                )));
            }
        }
        if !(1..=5).contains(&self.caption_count) {
            return Err(Error::Invalid(format!(
                "{} captions requested, need 1..=5",
                self.caption_count
            )));
        }
        let bg_same = self.bg_gain_db[0] == self.bg_gain_db[1];
        let changed: Vec<usize> = (0..self.events.len())
            .filter(|&i| !Self::same_event_in_both(&self.events[i]))
            .collect();
        if bg_same && changed.is_empty() {
            return Err(Error::NoDifference);
        }
        let bad = |msg: &str| {
            Err(Error::Invalid(format!(
                "{} difference: {msg}",
                self.difference
            )))
        };
        match self.difference {
            DifferenceType::BgLevel => {
                if !changed.is_empty() {
                    return bad("events must be identical in both clips");
                }
                if !sign_matches(self.bg_gain_db[1] - self.bg_gain_db[0], self.direction) {
                    return bad("background gain change disagrees with direction");
                }
            }
            DifferenceType::EventLevel | DifferenceType::EventPresence => {
                let Some(t) = self.target_event else {
                    return bad("missing target event");
                };
                if !bg_same || changed != [t] {
                    return bad("only the target event may differ");
                }
                let ev = &self.events[t];
                let ok = if self.difference == DifferenceType::EventLevel {
                    ev.present == [true, true]
                        && sign_matches(ev.gain_db[1] - ev.gain_db[0], self.direction)
                } else {
                    match self.direction {
                        Direction::Increase => ev.present == [false, true],
                        Direction::Decrease => ev.present == [true, false],
                    }
                };
                if !ok {
                    return bad("target event change disagrees with direction");
                }
            }
        }
        Ok(())
    }
}

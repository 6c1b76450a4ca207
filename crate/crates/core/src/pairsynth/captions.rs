use crate::error::{Error, Result};
use crate::pairsynth::spec::{
    Background, DifferenceType, Direction, EventClass, PairSpec, SoundClass,
};

pub const TEMPLATES_PER_CELL: usize = 5;

/// Noun phrase with a definite article ("the dog").
pub fn definite(class: SoundClass) -> &'static str {
    match class {
        SoundClass::Background(Background::Rain) => "the rain",
        SoundClass::Background(Background::CarPassingBy) => "the car passing by",
        SoundClass::Event(EventClass::Dog) => "the dog",
        SoundClass::Event(EventClass::ChirpingBird) => "the chirping bird",
        SoundClass::Event(EventClass::Thunder) => "the thunder",
        SoundClass::Event(EventClass::Footsteps) => "the footsteps",
        SoundClass::Event(EventClass::CarHorn) => "the car horn",
        SoundClass::Event(EventClass::ChurchBells) => "the church bells",
    }
}

/// Noun phrase used when a sound is introduced ("a dog").
pub fn indefinite(class: SoundClass) -> &'static str {
    match class {
        SoundClass::Background(Background::Rain) => "rain",
        SoundClass::Background(Background::CarPassingBy) => "a car passing by",
        SoundClass::Event(EventClass::Dog) => "a dog",
        SoundClass::Event(EventClass::ChirpingBird) => "a chirping bird",
        SoundClass::Event(EventClass::Thunder) => "thunder",
        SoundClass::Event(EventClass::Footsteps) => "footsteps",
        SoundClass::Event(EventClass::CarHorn) => "a car horn",
        SoundClass::Event(EventClass::ChurchBells) => "church bells",
    }
}

const LOUDER: [&str; TEMPLATES_PER_CELL] = [
    "make {the} louder",
    "turn up {the}",
    "increase the volume of {the}",
    "raise the level of {the}",
    "make the sound of {the} louder",
];

const QUIETER: [&str; TEMPLATES_PER_CELL] = [
    "make {the} quieter",
    "turn down {the}",
    "decrease the volume of {the}",
    "lower the level of {the}",
    "make the sound of {the} quieter",
];

const ADD: [&str; TEMPLATES_PER_CELL] = [
    "add the sound of {a}",
    "add {a}",
    "insert the sound of {a}",
    "mix in {a}",
    "put in the sound of {a}",
];

const REMOVE: [&str; TEMPLATES_PER_CELL] = [
    "remove the sound of {the}",
    "remove {the}",
    "delete the sound of {the}",
    "take out {the}",
    "cut out the sound of {the}",
];

/// The five paraphrase patterns of one (difference type, direction) family.
pub fn template_family(
    difference: DifferenceType,
    direction: Direction,
) -> &'static [&'static str; TEMPLATES_PER_CELL] {
    match (difference, direction) {
        (DifferenceType::EventPresence, Direction::Increase) => &ADD,
        (DifferenceType::EventPresence, Direction::Decrease) => &REMOVE,
        (_, Direction::Increase) => &LOUDER,
        (_, Direction::Decrease) => &QUIETER,
    }
}

/// All five captions of one cell, most canonical first.
pub fn cell_captions(
    class: SoundClass,
    difference: DifferenceType,
    direction: Direction,
) -> Vec<String> {
    template_family(difference, direction)
        .iter()
        .map(|t| {
            t.replace("{the}", definite(class))
                .replace("{a}", indefinite(class))
        })
        .collect()
}

/// The first `k` captions of the spec's cell.
pub fn render_captions(spec: &PairSpec, k: usize) -> Result<Vec<String>> {
    if k == 0 || k > TEMPLATES_PER_CELL {
        return Err(Error::Invalid(format!(
            "{k} captions requested, {TEMPLATES_PER_CELL} templates available"
        )));
    }
    let mut caps = cell_captions(spec.subject()?, spec.difference, spec.direction);
    caps.truncate(k);
    Ok(caps)
}

/// Every (class, difference type, direction) cell the generator can produce.
pub fn all_cells() -> Vec<(SoundClass, DifferenceType, Direction)> {
    let mut cells = Vec::new();
    for dir in [Direction::Increase, Direction::Decrease] {
        for bg in Background::ALL {
            cells.push((SoundClass::Background(bg), DifferenceType::BgLevel, dir));
        }
        for ev in EventClass::ALL {
            for ty in [DifferenceType::EventLevel, DifferenceType::EventPresence] {
                cells.push((SoundClass::Event(ev), ty, dir));
            }
        }
    }
    cells
}

/// Every caption in the template table.
pub fn all_captions() -> Vec<String> {
    all_cells()
        .into_iter()
        .flat_map(|(c, t, d)| cell_captions(c, t, d))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn rain_louder_is_first() {
        let caps = cell_captions(
            SoundClass::Background(Background::Rain),
            DifferenceType::BgLevel,
            Direction::Increase,
        );
        assert_eq!(caps[0], "make the rain louder");
        let add = cell_captions(
            SoundClass::Event(EventClass::Dog),
            DifferenceType::EventPresence,
            Direction::Increase,
        );
        assert_eq!(add[0], "add the sound of a dog");
    }

    #[test]
    fn directions_never_share_a_string() {
        for (class, ty, dir) in all_cells() {
            if dir != Direction::Increase {
                continue;
            }
            let up: HashSet<String> = cell_captions(class, ty, Direction::Increase)
                .into_iter()
                .collect();
            let down: HashSet<String> = cell_captions(class, ty, Direction::Decrease)
                .into_iter()
                .collect();
            assert_eq!(up.len(), TEMPLATES_PER_CELL);
            assert!(up.is_disjoint(&down), "{class:?} {ty}");
        }
    }

    #[test]
    fn captions_are_lowercase_instructions() {
        for c in all_captions() {
            assert!(!c.is_empty());
            assert_eq!(c, c.to_lowercase());
        }
        assert_eq!(all_cells().len(), 28);
    }
}

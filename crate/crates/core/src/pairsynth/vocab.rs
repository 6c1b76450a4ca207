use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::pairsynth::captions::all_captions;

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;

pub const RESERVED: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<unk>"];

/// Lowercases, replaces punctuation with spaces and splits on whitespace.
pub fn words(caption: &str) -> Vec<String> {
    caption
        .to_lowercase()
        .chars()
        .map(|c| if c.is_ascii_punctuation() { ' ' } else { c })
        .collect::<String>()
        .split_whitespace()
        .map(str::to_owned)
        .collect()
}

pub fn normalize(caption: &str) -> String {
    words(caption).join(" ")
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Reserved tokens followed by `words` in the given order. Duplicates and
    /// reserved names are rejected.
    pub fn new<I, S>(words: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        tokens.extend(words.into_iter().map(Into::into));
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(Error::Invalid(format!(
                    "bad vocabulary token {t:?} at line {}",
                    i + 1
                )));
            }
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Invalid(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Self { tokens, index })
    }

    /// Sorted word set of the caption template table.
    pub fn from_templates() -> Self {
        let set: BTreeSet<String> = all_captions().iter().flat_map(|c| words(c)).collect();
        Self::new(set).expect("template words are unique")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// `[bos, words.., eos]`, unknown words mapped to [`UNK`].
    pub fn tokenize(&self, caption: &str) -> Vec<usize> {
        let mut ids = vec![BOS];
        ids.extend(words(caption).iter().map(|w| self.id(w).unwrap_or(UNK)));
        ids.push(EOS);
        ids
    }

    /// Joins word tokens with single spaces, skipping reserved ids.
    pub fn detokenize(&self, ids: &[usize]) -> String {
        ids.iter()
            .filter(|&&i| i >= RESERVED.len())
            .filter_map(|&i| self.token(i))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Word strings of `ids`, reserved ids skipped; what the metrics consume.
    pub fn words_of(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .filter(|&&i| i >= RESERVED.len())
            .filter_map(|&i| self.token(i).map(str::to_owned))
            .collect()
    }

    /// One token per line; line number equals id.
    pub fn to_text(&self) -> String {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let lines: Vec<&str> = text.lines().collect();
        if lines.len() < RESERVED.len() || lines[..RESERVED.len()] != RESERVED {
            return Err(Error::Format(
                "vocabulary must start with <pad>, <bos>, <eos>, <unk>".into(),
            ));
        }
        Self::new(lines[RESERVED.len()..].iter().copied())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    /// Hex SHA-256 of the file form.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenize_example() {
        let v = Vocabulary::from_templates();
        let ids = v.tokenize("Make the rain louder");
        let expect: Vec<usize> = [BOS]
            .into_iter()
            .chain(
                ["make", "the", "rain", "louder"]
                    .iter()
                    .map(|w| v.id(w).unwrap()),
            )
            .chain([EOS])
            .collect();
        assert_eq!(ids, expect);
        assert_eq!(v.detokenize(&ids), "make the rain louder");
    }

    #[test]
    fn unknown_words_map_to_unk() {
        let v = Vocabulary::from_templates();
        assert_eq!(v.tokenize("make the xylophone louder")[3], UNK);
    }

    #[test]
    fn reserved_ids_are_fixed() {
        let v = Vocabulary::from_templates();
        for (i, r) in RESERVED.iter().enumerate() {
            assert_eq!(v.id(r), Some(i));
        }
        assert_eq!((PAD, BOS, EOS, UNK), (0, 1, 2, 3));
    }

    #[test]
    fn text_round_trip_and_bijection() {
        let v = Vocabulary::from_templates();
        let back = Vocabulary::from_text(&v.to_text()).unwrap();
        assert_eq!(back, v);
        for (i, t) in v.tokens().iter().enumerate() {
            assert_eq!(v.id(t), Some(i));
        }
        assert!(Vocabulary::new(["a", "a"]).is_err());
        assert!(Vocabulary::from_text("x\ny\n").is_err());
    }

    #[test]
    fn every_template_round_trips_without_unk() {
        let v = Vocabulary::from_templates();
        for c in all_captions() {
            let ids = v.tokenize(&c);
            assert!(!ids.contains(&UNK), "{c}");
            assert_eq!(v.detokenize(&ids), normalize(&c));
        }
    }

    #[test]
    fn punctuation_is_stripped() {
        assert_eq!(
            normalize("  Make the RAIN louder!! "),
            "make the rain louder"
        );
    }
}

//! Option letters shared by the dataset, prompt and scoring modules.
//!
//! Index `0` is `A`, `1` is `B`, and so on up to [`MAX_OPTIONS`] letters.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Largest number of answer options a question may carry (`A`..=`H`).
pub const MAX_OPTIONS: usize = 8;

/// Smallest number of answer options a question may carry.
pub const MIN_OPTIONS: usize = 2;

/// A single option letter, stored as its 0-based option index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct OptionLetter(u8);

impl OptionLetter {
    pub fn from_index(index: usize) -> Option<Self> {
        (index < MAX_OPTIONS).then_some(Self(index as u8))
    }

    /// Accepts upper-case letters only; lower-case `a` is far more often the
    /// article than an answer.
    pub fn from_char(c: char) -> Option<Self> {
        if c.is_ascii_uppercase() {
            Self::from_index((c as u8 - b'A') as usize)
        } else {
            None
        }
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn as_char(self) -> char {
        (b'A' + self.0) as char
    }
}

impl fmt::Display for OptionLetter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_char())
    }
}

impl Serialize for OptionLetter {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut buf = [0u8; 4];
        serializer.serialize_str(self.as_char().encode_utf8(&mut buf))
    }
}

impl<'de> Deserialize<'de> for OptionLetter {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        let mut chars = s.chars();
        match (chars.next(), chars.next()) {
            (Some(c), None) => {
                Self::from_char(c).ok_or_else(|| serde::de::Error::custom(format!("not an option letter: {s:?}")))
            }
            _ => Err(serde::de::Error::custom(format!("not an option letter: {s:?}"))),
        }
    }
}

/// The first `count` letters, i.e. the letters in play for a question with
/// `count` options.
pub fn letters_in_play(count: usize) -> Vec<OptionLetter> {
    (0..count.min(MAX_OPTIONS))
        .filter_map(OptionLetter::from_index)
        .collect()
}

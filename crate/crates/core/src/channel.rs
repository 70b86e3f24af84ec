//! Finger channel identifiers.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Number of fingertip channels on a hand.
pub const CHANNELS: usize = 5;

/// Fingertip channel, thumb (I) to little finger (V).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Finger {
    I,
    II,
    III,
    IV,
    V,
}

impl Finger {
    pub const ALL: [Finger; CHANNELS] = [Finger::I, Finger::II, Finger::III, Finger::IV, Finger::V];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Finger> {
        Finger::ALL.get(i).copied()
    }

    pub fn roman(self) -> &'static str {
        match self {
            Finger::I => "I",
            Finger::II => "II",
            Finger::III => "III",
            Finger::IV => "IV",
            Finger::V => "V",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Finger::I => "thumb",
            Finger::II => "index",
            Finger::III => "middle",
            Finger::IV => "ring",
            Finger::V => "little",
        }
    }
}

impl fmt::Display for Finger {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.roman())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown finger channel `{0}` (expected I, II, III, IV or V)")]
pub struct ParseFingerError(pub String);

impl FromStr for Finger {
    type Err = ParseFingerError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "I" | "1" | "thumb" => Ok(Finger::I),
            "II" | "2" | "index" => Ok(Finger::II),
            "III" | "3" | "middle" => Ok(Finger::III),
            "IV" | "4" | "ring" => Ok(Finger::IV),
            "V" | "5" | "little" => Ok(Finger::V),
            other => Err(ParseFingerError(other.to_string())),
        }
    }
}

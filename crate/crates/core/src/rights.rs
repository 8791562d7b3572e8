//! Copyright/access rights as a 6-bit mask.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Right {
    Publication = 0,
    Revision = 1,
    Reproduction = 2,
    Exhibition = 3,
    Performance = 4,
    Broadcasting = 5,
}

impl Right {
    pub const ALL: [Right; 6] = [
        Right::Publication,
        Right::Revision,
        Right::Reproduction,
        Right::Exhibition,
        Right::Performance,
        Right::Broadcasting,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Right::Publication => "publication",
            Right::Revision => "revision",
            Right::Reproduction => "reproduction",
            Right::Exhibition => "exhibition",
            Right::Performance => "performance",
            Right::Broadcasting => "broadcasting",
        }
    }

    fn bit(self) -> u8 {
        1 << self as u8
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RightsError {
    #[error("unknown right {0:?}")]
    Unknown(String),
    #[error("mask {0:#04x} has bits outside the six known rights")]
    Mask(u8),
    #[error("rights list is not in canonical sorted form")]
    NotCanonical,
}

/// Bit 0 is publication, bit 5 broadcasting.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct AccessRights(u8);

impl AccessRights {
    pub const MASK: u8 = 0b0011_1111;

    pub fn empty() -> Self {
        AccessRights(0)
    }

    pub fn all() -> Self {
        AccessRights(Self::MASK)
    }

    pub fn from_mask(mask: u8) -> Result<Self, RightsError> {
        if mask & !Self::MASK != 0 {
            return Err(RightsError::Mask(mask));
        }
        Ok(AccessRights(mask))
    }

    pub fn mask(self) -> u8 {
        self.0
    }

    pub fn with(self, right: Right) -> Self {
        AccessRights(self.0 | right.bit())
    }

    pub fn contains(self, right: Right) -> bool {
        self.0 & right.bit() != 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn is_subset_of(self, other: AccessRights) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn iter(self) -> impl Iterator<Item = Right> {
        Right::ALL.into_iter().filter(move |r| self.contains(*r))
    }

    /// Comma-joined names sorted alphabetically, the form used for agreement
    /// copyrights.
    pub fn to_names(self) -> String {
        let mut names: Vec<_> = self.iter().map(Right::name).collect();
        names.sort_unstable();
        names.join(",")
    }

    /// Parses a comma-separated list in any order.
    pub fn parse_names(text: &str) -> Result<Self, RightsError> {
        text.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .try_fold(AccessRights::empty(), |acc, name| {
                Right::ALL
                    .into_iter()
                    .find(|r| r.name() == name)
                    .map(|r| acc.with(r))
                    .ok_or_else(|| RightsError::Unknown(name.to_string()))
            })
    }

    /// Like [`parse_names`](Self::parse_names) but only accepts the exact
    /// output of [`to_names`](Self::to_names).
    pub fn parse_canonical(text: &str) -> Result<Self, RightsError> {
        let rights = Self::parse_names(text)?;
        if rights.to_names() != text {
            return Err(RightsError::NotCanonical);
        }
        Ok(rights)
    }
}

impl FromIterator<Right> for AccessRights {
    fn from_iter<I: IntoIterator<Item = Right>>(iter: I) -> Self {
        iter.into_iter().fold(AccessRights::empty(), AccessRights::with)
    }
}

impl FromStr for AccessRights {
    type Err = RightsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::parse_names(s)
    }
}

impl fmt::Display for AccessRights {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_names())
    }
}

impl fmt::Debug for AccessRights {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "AccessRights({:#08b}: {})", self.0, self.to_names())
    }
}

impl Serialize for AccessRights {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(self.0)
    }
}

impl<'de> Deserialize<'de> for AccessRights {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        AccessRights::from_mask(u8::deserialize(d)?).map_err(serde::de::Error::custom)
    }
}

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Machine state labels. Declaration order is the canonical (alphabetical)
/// order used for tie-breaking and for every class-indexed vector.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum FaultClass {
    BearingDamage,
    Cavitation,
    GearFault,
    Imbalance,
    Looseness,
    Misalignment,
    Normal,
}

impl FaultClass {
    pub const COUNT: usize = 7;

    pub const ALL: [FaultClass; 7] = [
        FaultClass::BearingDamage,
        FaultClass::Cavitation,
        FaultClass::GearFault,
        FaultClass::Imbalance,
        FaultClass::Looseness,
        FaultClass::Misalignment,
        FaultClass::Normal,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FaultClass::BearingDamage => "bearing_damage",
            FaultClass::Cavitation => "cavitation",
            FaultClass::GearFault => "gear_fault",
            FaultClass::Imbalance => "imbalance",
            FaultClass::Looseness => "looseness",
            FaultClass::Misalignment => "misalignment",
            FaultClass::Normal => "normal",
        }
    }

    /// Position in [`FaultClass::ALL`].
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<FaultClass> {
        Self::ALL.get(i).copied()
    }
}

impl fmt::Display for FaultClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FaultClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.trim().to_ascii_lowercase().replace([' ', '-'], "_");
        FaultClass::ALL
            .iter()
            .copied()
            .find(|c| c.as_str() == key)
            .ok_or_else(|| Error::input(format!("unknown fault class `{s}`")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip_and_are_sorted() {
        let names: Vec<&str> = FaultClass::ALL.iter().map(|c| c.as_str()).collect();
        let mut sorted = names.clone();
        sorted.sort();
        assert_eq!(names, sorted);
        for c in FaultClass::ALL {
            assert_eq!(c.as_str().parse::<FaultClass>().unwrap(), c);
            assert_eq!(FaultClass::from_index(c.index()), Some(c));
        }
        assert_eq!("Bearing Damage".parse::<FaultClass>().unwrap(), FaultClass::BearingDamage);
        assert!("rust".parse::<FaultClass>().is_err());
    }
}

//! Anatomical label vocabulary shared by every stage.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Vertebral levels analyzed by the spine stage, ordered superior to inferior.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum VertebralLevel {
    T12,
    L1,
    L2,
    L3,
    L4,
    L5,
}

impl VertebralLevel {
    pub const ALL: [VertebralLevel; 6] = [
        VertebralLevel::T12,
        VertebralLevel::L1,
        VertebralLevel::L2,
        VertebralLevel::L3,
        VertebralLevel::L4,
        VertebralLevel::L5,
    ];

    pub fn name(self) -> &'static str {
        match self {
            VertebralLevel::T12 => "T12",
            VertebralLevel::L1 => "L1",
            VertebralLevel::L2 => "L2",
            VertebralLevel::L3 => "L3",
            VertebralLevel::L4 => "L4",
            VertebralLevel::L5 => "L5",
        }
    }

    /// Position in the superior-to-inferior ordering (T12 = 0).
    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for VertebralLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for VertebralLevel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        VertebralLevel::ALL
            .into_iter()
            .find(|l| l.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown vertebral level '{s}'"))
    }
}

/// Soft tissue compartments measured on axial slices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TissueClass {
    Muscle,
    Imat,
    Vat,
    Sat,
}

impl TissueClass {
    /// Column order used in every tabular output.
    pub const ALL: [TissueClass; 4] = [
        TissueClass::Muscle,
        TissueClass::Imat,
        TissueClass::Vat,
        TissueClass::Sat,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TissueClass::Muscle => "muscle",
            TissueClass::Imat => "imat",
            TissueClass::Vat => "vat",
            TissueClass::Sat => "sat",
        }
    }
}

impl fmt::Display for TissueClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TissueClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TissueClass::ALL
            .into_iter()
            .find(|t| t.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown tissue class '{s}'"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn levels_ordered_superior_to_inferior() {
        let names: Vec<_> = VertebralLevel::ALL.iter().map(|l| l.name()).collect();
        assert_eq!(names, ["T12", "L1", "L2", "L3", "L4", "L5"]);
        assert!(VertebralLevel::T12 < VertebralLevel::L5);
        assert_eq!("l3".parse::<VertebralLevel>().unwrap(), VertebralLevel::L3);
    }

    #[test]
    fn tissue_names_round_trip() {
        for t in TissueClass::ALL {
            assert_eq!(t.name().parse::<TissueClass>().unwrap(), t);
        }
        assert!("bone".parse::<TissueClass>().is_err());
    }
}

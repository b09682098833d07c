use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

/// How a knowledge item is presented during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    /// Same text at every injection.
    Duplication,
    /// A different paraphrase at every injection.
    Paraphrase,
    /// A single injection.
    Once,
}

impl Scenario {
    pub const ALL: [Scenario; 3] = [Scenario::Duplication, Scenario::Paraphrase, Scenario::Once];

    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::Duplication => "duplication",
            Scenario::Paraphrase => "paraphrase",
            Scenario::Once => "once",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scenario {
    type Err = UnknownName;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "duplication" => Ok(Scenario::Duplication),
            "paraphrase" => Ok(Scenario::Paraphrase),
            "once" => Ok(Scenario::Once),
            _ => Err(UnknownName),
        }
    }
}

/// Acquisition depth probed by a cloze item.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Depth {
    Memorization,
    Semantic,
    Composition,
}

impl Depth {
    pub const ALL: [Depth; 3] = [Depth::Memorization, Depth::Semantic, Depth::Composition];

    pub fn as_str(self) -> &'static str {
        match self {
            Depth::Memorization => "memorization",
            Depth::Semantic => "semantic",
            Depth::Composition => "composition",
        }
    }
}

impl fmt::Display for Depth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Depth {
    type Err = UnknownName;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "memorization" => Ok(Depth::Memorization),
            "semantic" => Ok(Depth::Semantic),
            "composition" => Ok(Depth::Composition),
            _ => Err(UnknownName),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("unknown name")]
pub struct UnknownName;

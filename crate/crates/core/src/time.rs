use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Time instants and durations, in integer microseconds.
///
/// Instants may be logical or epoch based; only differences matter to the
/// analysis.
pub type Micros = i64;

/// One of the three temporal aspects of an activity instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aspect {
    Begin,
    Duration,
    End,
}

impl Aspect {
    pub const ALL: [Aspect; 3] = [Aspect::Begin, Aspect::Duration, Aspect::End];

    pub fn index(self) -> usize {
        match self {
            Aspect::Begin => 0,
            Aspect::Duration => 1,
            Aspect::End => 2,
        }
    }

    pub fn from_index(i: usize) -> Aspect {
        Aspect::ALL[i]
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Aspect::Begin => "begin",
            Aspect::Duration => "duration",
            Aspect::End => "end",
        }
    }
}

impl fmt::Display for Aspect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Aspect {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "begin" => Ok(Aspect::Begin),
            "duration" => Ok(Aspect::Duration),
            "end" => Ok(Aspect::End),
            other => Err(format!("unknown aspect `{other}`")),
        }
    }
}

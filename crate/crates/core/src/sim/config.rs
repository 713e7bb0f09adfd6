use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Exp, LogNormal, Normal, Uniform};
use serde::{Deserialize, Serialize};

use super::SimError;
use crate::time::Micros;

/// A sampling law for durations, gaps and inter-arrival times (µs).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "lowercase", deny_unknown_fields)]
pub enum Law {
    Constant { value: f64 },
    Uniform { lo: f64, hi: f64 },
    /// Truncated below at 1.
    Normal { mean: f64, sd: f64 },
    Lognormal { mu: f64, sigma: f64 },
    Exponential { mean: f64 },
}

impl Law {
    pub fn constant(value: f64) -> Self {
        Law::Constant { value }
    }

    pub fn uniform(lo: f64, hi: f64) -> Self {
        Law::Uniform { lo, hi }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidLaw(m));
        match *self {
            Law::Constant { value } if !value.is_finite() || value < 0.0 => bad(format!("constant {value}")),
            Law::Uniform { lo, hi } if !(lo.is_finite() && hi.is_finite()) || lo > hi || lo < 0.0 => {
                bad(format!("uniform({lo}, {hi})"))
            }
            Law::Normal { mean, sd } if !(mean.is_finite() && sd.is_finite()) || sd < 0.0 => {
                bad(format!("normal({mean}, {sd})"))
            }
            Law::Lognormal { mu, sigma } if !(mu.is_finite() && sigma.is_finite()) || sigma < 0.0 => {
                bad(format!("lognormal({mu}, {sigma})"))
            }
            Law::Exponential { mean } if !mean.is_finite() || mean <= 0.0 => bad(format!("exponential({mean})")),
            _ => Ok(()),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Law::Constant { value } => value,
            Law::Uniform { lo, hi } => {
                if lo == hi {
                    lo
                } else {
                    Uniform::new_inclusive(lo, hi).expect("validated").sample(rng)
                }
            }
            Law::Normal { mean, sd } => Normal::new(mean, sd).expect("validated").sample(rng).max(1.0),
            Law::Lognormal { mu, sigma } => LogNormal::new(mu, sigma).expect("validated").sample(rng),
            Law::Exponential { mean } => Exp::new(1.0 / mean).expect("validated").sample(rng),
        }
    }

    /// Cumulative distribution function, used by goodness-of-fit tests.
    pub fn cdf(&self, x: f64) -> f64 {
        match *self {
            Law::Constant { value } => {
                if x >= value {
                    1.0
                } else {
                    0.0
                }
            }
            Law::Uniform { lo, hi } => {
                if hi == lo {
                    (x >= lo) as u8 as f64
                } else {
                    ((x - lo) / (hi - lo)).clamp(0.0, 1.0)
                }
            }
            Law::Exponential { mean } => {
                if x <= 0.0 {
                    0.0
                } else {
                    1.0 - (-x / mean).exp()
                }
            }
            Law::Normal { .. } | Law::Lognormal { .. } => f64::NAN,
        }
    }
}

/// Offset added to every timestamp a source emits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Skew {
    None,
    Constant { offset_us: Micros },
    /// `amplitude · sin(2π t / period + phase)`
    Sinusoid {
        amplitude_us: f64,
        period_us: f64,
        #[serde(default)]
        phase: f64,
    },
}

impl Skew {
    pub fn at(&self, t: Micros) -> Micros {
        match *self {
            Skew::None => 0,
            Skew::Constant { offset_us } => offset_us,
            Skew::Sinusoid {
                amplitude_us,
                period_us,
                phase,
            } => (amplitude_us * (2.0 * PI * t as f64 / period_us + phase).sin()).round() as Micros,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Omission {
    pub source: String,
    #[serde(default)]
    pub probability: f64,
    /// When non-empty, exactly these trace indices lose the source and
    /// `probability` is ignored.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub traces: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShortIds {
    #[serde(default = "default_short_len")]
    pub length: usize,
    /// Activities whose records carry the shortened id.
    pub activities: Vec<String>,
}

fn default_short_len() -> usize {
    8
}

/// Multiplies an atomic activity's sampled duration for traces that begin
/// inside `[start_us, end_us)`; with `decay_us` the factor then relaxes
/// exponentially instead of stopping at `end_us`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Spike {
    pub activity: String,
    pub start_us: Micros,
    pub end_us: Micros,
    pub multiplier: f64,
    #[serde(default)]
    pub decay_us: Option<f64>,
}

impl Spike {
    pub fn factor(&self, t: Micros) -> f64 {
        if t < self.start_us {
            1.0
        } else if t < self.end_us {
            self.multiplier
        } else {
            match self.decay_us {
                Some(tau) if tau > 0.0 => 1.0 + (self.multiplier - 1.0) * (-((t - self.end_us) as f64) / tau).exp(),
                _ => 1.0,
            }
        }
    }
}

/// Delays the emitted end timestamp of an activity by up to `max_us`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogDelay {
    pub activity: String,
    pub max_us: Micros,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    #[serde(default = "default_traces")]
    pub traces: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub start_us: Micros,
    #[serde(default = "default_inter_arrival")]
    pub inter_arrival: Law,
    #[serde(default = "default_duration")]
    pub default_duration: Law,
    /// Per atomic activity (by name) duration laws.
    #[serde(default)]
    pub durations: BTreeMap<String, Law>,
    /// Gap sampled for `before` edges.
    #[serde(default = "default_gap")]
    pub gap: Law,
    /// Per source skew schedules.
    #[serde(default)]
    pub skew: BTreeMap<String, Skew>,
    #[serde(default)]
    pub omissions: Vec<Omission>,
    #[serde(default = "default_id_length")]
    pub id_length: usize,
    #[serde(default)]
    pub short_ids: Option<ShortIds>,
    /// Pairs of trace indices `[i, j]`: trace j reuses trace i's id prefix.
    #[serde(default)]
    pub prefix_collisions: Vec<(usize, usize)>,
    #[serde(default)]
    pub spikes: Vec<Spike>,
    #[serde(default)]
    pub log_delays: Vec<LogDelay>,
}

fn default_traces() -> usize {
    100
}
fn default_inter_arrival() -> Law {
    Law::constant(100_000.0)
}
fn default_duration() -> Law {
    Law::uniform(100.0, 1_000.0)
}
fn default_gap() -> Law {
    Law::uniform(0.0, 1_000.0)
}
fn default_id_length() -> usize {
    64
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            traces: default_traces(),
            seed: 0,
            start_us: 0,
            inter_arrival: default_inter_arrival(),
            default_duration: default_duration(),
            durations: BTreeMap::new(),
            gap: default_gap(),
            skew: BTreeMap::new(),
            omissions: Vec::new(),
            id_length: default_id_length(),
            short_ids: None,
            prefix_collisions: Vec::new(),
            spikes: Vec::new(),
            log_delays: Vec::new(),
        }
    }
}

impl SimConfig {
    pub fn from_json(text: &str) -> Result<Self, SimError> {
        serde_json::from_str(text).map_err(|e| SimError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), SimError> {
        self.inter_arrival.validate()?;
        self.default_duration.validate()?;
        self.gap.validate()?;
        for l in self.durations.values() {
            l.validate()?;
        }
        for o in &self.omissions {
            if !(0.0..=1.0).contains(&o.probability) {
                return Err(SimError::Config(format!(
                    "omission probability {} for `{}` is outside [0, 1]",
                    o.probability, o.source
                )));
            }
            if let Some(t) = o.traces.iter().find(|&&t| t >= self.traces) {
                return Err(SimError::Config(format!("omission of `{}` names trace {t} of {}", o.source, self.traces)));
            }
        }
        if let Some(s) = &self.short_ids {
            if s.length == 0 || s.length >= self.id_length {
                return Err(SimError::Config(format!(
                    "short id length {} must be in [1, {})",
                    s.length, self.id_length
                )));
            }
        }
        for &(i, j) in &self.prefix_collisions {
            if i >= self.traces || j >= self.traces || i == j {
                return Err(SimError::Config(format!("prefix collision ({i}, {j}) is out of range")));
            }
        }
        for s in &self.spikes {
            if !(s.multiplier.is_finite() && s.multiplier > 0.0) {
                return Err(SimError::Config(format!("spike multiplier {} for `{}`", s.multiplier, s.activity)));
            }
        }
        Ok(())
    }

    pub fn skew_of(&self, source: &str) -> Option<&Skew> {
        self.skew.get(source)
    }
}

//! Ground-truth trace generator.
//!
//! Builds fully valued timelines that satisfy every model relation exactly
//! and emits only the measured aspects, optionally distorted by clock skew,
//! omissions, shortened ids, spikes and logging delays.

mod config;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::derivation::Timeline;
use crate::model::{
    ActivityKind, ActivityModel, Bindings, InstanceTemplate, Relation, SlotId, SyncSemantic, TemplateError,
};
use crate::time::{Aspect, Micros};
use crate::trace::{ObservationRecord, TidKind};

pub use config::{Law, LogDelay, Omission, ShortIds, SimConfig, Skew, Spike};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("invalid distribution: {0}")]
    InvalidLaw(String),
    #[error("invalid simulation config: {0}")]
    Config(String),
}

/// True begin/duration/end of every slot of one trace.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrueTrace {
    pub trace_id: String,
    pub values: Vec<[Micros; 3]>,
}

impl TrueTrace {
    pub fn get(&self, slot: SlotId, aspect: Aspect) -> Micros {
        self.values[slot.0][aspect.index()]
    }

    pub fn begin(&self) -> Micros {
        self.values[0][0]
    }
}

#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub template: Arc<InstanceTemplate>,
    pub traces: Vec<TrueTrace>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruthDoc {
    pub trace_id: String,
    pub slots: BTreeMap<String, BTreeMap<Aspect, Micros>>,
}

impl GroundTruth {
    /// The true values of one trace as a timeline with one `truth`
    /// measurement per slot-aspect.
    pub fn timeline(&self, i: usize) -> Timeline {
        let tr = &self.traces[i];
        let mut t = Timeline::empty(tr.trace_id.clone(), self.template.clone());
        for s in self.template.ids() {
            for a in Aspect::ALL {
                t.push_measured(s, a, tr.get(s, a), "truth");
            }
        }
        t
    }

    pub fn timelines(&self) -> Vec<Timeline> {
        (0..self.traces.len()).map(|i| self.timeline(i)).collect()
    }

    pub fn by_id(&self, trace_id: &str) -> Option<&TrueTrace> {
        self.traces.iter().find(|t| t.trace_id == trace_id)
    }

    pub fn to_docs(&self) -> Vec<TruthDoc> {
        self.traces
            .iter()
            .map(|tr| TruthDoc {
                trace_id: tr.trace_id.clone(),
                slots: self
                    .template
                    .ids()
                    .map(|s| {
                        let aspects = Aspect::ALL.iter().map(|&a| (a, tr.get(s, a))).collect();
                        (self.template.slot(s).path.to_string(), aspects)
                    })
                    .collect(),
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct SimOutput {
    pub truth: GroundTruth,
    pub records: Vec<ObservationRecord>,
}

pub fn simulate(model: &ActivityModel, bindings: &Bindings, config: &SimConfig) -> Result<SimOutput, SimError> {
    let template = Arc::new(crate::model::expand_instance_template(model, bindings)?);
    simulate_template(template, config)
}

pub fn simulate_template(template: Arc<InstanceTemplate>, config: &SimConfig) -> Result<SimOutput, SimError> {
    config.validate()?;
    let model = template.model();

    let mut arrivals = ChaCha8Rng::seed_from_u64(config.seed);
    arrivals.set_stream(u64::MAX);
    let mut begin = config.start_us;
    let mut starts = Vec::with_capacity(config.traces);
    for _ in 0..config.traces {
        starts.push(begin);
        begin += config.inter_arrival.sample(&mut arrivals).round().max(0.0) as Micros;
    }

    let mut ids: Vec<String> = (0..config.traces)
        .map(|i| {
            let mut rng = trace_rng(config.seed, i, 1);
            (0..config.id_length)
                .map(|_| char::from_digit(rng.random_range(0..16u32), 16).expect("hex digit"))
                .collect()
        })
        .collect();
    let prefix_len = config.short_ids.as_ref().map_or(8, |s| s.length).min(config.id_length);
    for &(i, j) in &config.prefix_collisions {
        let prefix: String = ids[i].chars().take(prefix_len).collect();
        let rest: String = ids[j].chars().skip(prefix_len).collect();
        ids[j] = prefix + &rest;
    }

    let short: BTreeSet<&str> = config
        .short_ids
        .as_ref()
        .map(|s| s.activities.iter().map(String::as_str).collect())
        .unwrap_or_default();

    let mut traces = Vec::with_capacity(config.traces);
    let mut records = Vec::new();
    for (i, id) in ids.into_iter().enumerate() {
        let mut rng = trace_rng(config.seed, i, 0);
        let values = realize(&template, config, starts[i], &mut rng);
        let tr = TrueTrace { trace_id: id, values };

        let dropped: BTreeSet<&str> = config
            .omissions
            .iter()
            .filter(|o| {
                // always draw so that listing traces does not shift the stream
                let hit = rng.random::<f64>() < o.probability;
                if o.traces.is_empty() {
                    hit
                } else {
                    o.traces.contains(&i)
                }
            })
            .map(|o| o.source.as_str())
            .collect();
        for s in template.ids() {
            let slot = template.slot(s);
            let ty = model.ty(slot.activity);
            if ty.measured.is_empty() || dropped.contains(slot.source.as_str()) {
                continue;
            }
            let skew = config.skew_of(&slot.source);
            let shift = |t: Micros| skew.map_or(0, |k| k.at(t));
            let delay: Micros = config
                .log_delays
                .iter()
                .filter(|d| d.activity == ty.name && d.max_us > 0)
                .map(|d| rng.random_range(0..=d.max_us))
                .sum();
            let (b, e) = (tr.get(s, Aspect::Begin), tr.get(s, Aspect::End));
            let captured = e + shift(e) + delay;
            let (tid, tid_kind) = if short.contains(ty.name.as_str()) {
                (tr.trace_id.chars().take(prefix_len).collect(), TidKind::Short)
            } else {
                (tr.trace_id.clone(), TidKind::Full)
            };
            for &a in &ty.measured {
                let value = match a {
                    Aspect::Begin => b + shift(b),
                    Aspect::End => e + shift(e) + delay,
                    Aspect::Duration => (e + shift(e)) - (b + shift(b)),
                };
                records.push(ObservationRecord {
                    tid: tid.clone(),
                    tid_kind,
                    activity: ty.name.clone(),
                    replica: slot.discriminator.clone(),
                    aspect: a,
                    value_us: value,
                    source: slot.source.clone(),
                    captured_us: captured,
                });
            }
        }
        traces.push(tr);
    }
    Ok(SimOutput {
        truth: GroundTruth { template, traces },
        records,
    })
}

/// Per-trace generator: independent of how many traces are generated or in
/// which order.
fn trace_rng(seed: u64, trace: usize, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ purpose.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(trace as u64);
    rng
}

/// Lays out one trace. Children of sequential parents follow the chain
/// (zero gap for `meets`, sampled gap for `before`), fork children share
/// the parent's begin, alternating children run back to back in random
/// order.
fn realize(template: &InstanceTemplate, config: &SimConfig, start: Micros, rng: &mut ChaCha8Rng) -> Vec<[Micros; 3]> {
    let mut values = vec![[0; 3]; template.len()];
    place(template, config, template.root(), start, start, rng, &mut values);
    values
}

fn place(
    template: &InstanceTemplate,
    config: &SimConfig,
    slot: SlotId,
    begin: Micros,
    trace_begin: Micros,
    rng: &mut ChaCha8Rng,
    values: &mut [[Micros; 3]],
) -> Micros {
    let model = template.model();
    let s = template.slot(slot);
    let ty = model.ty(s.activity);
    let end = match ty.kind {
        ActivityKind::Atomic | ActivityKind::Unrefined => {
            let law = config.durations.get(&ty.name).unwrap_or(&config.default_duration);
            let mut d = law.sample(rng);
            for sp in config.spikes.iter().filter(|sp| sp.activity == ty.name) {
                d *= sp.factor(trace_begin);
            }
            begin + (d.round() as Micros).max(1)
        }
        ActivityKind::Sequential => {
            let order = chain(template, slot);
            let mut t = begin;
            for (k, &c) in order.iter().enumerate() {
                if k > 0 {
                    let prev = template.slot(order[k - 1]).activity;
                    if model.has_edge(prev, Relation::Before, template.slot(c).activity) {
                        t += config.gap.sample(rng).round().max(0.0) as Micros;
                    }
                }
                t = place(template, config, c, t, trace_begin, rng, values);
            }
            t
        }
        ActivityKind::Forked => {
            let ends: Vec<Micros> = s
                .children
                .clone()
                .into_iter()
                .map(|c| place(template, config, c, begin, trace_begin, rng, values))
                .collect();
            match ty.sync {
                Some(SyncSemantic::WaitForAny) => *ends.iter().min().unwrap_or(&begin),
                _ => *ends.iter().max().unwrap_or(&begin),
            }
        }
        ActivityKind::Alternating => {
            let mut order = s.children.clone();
            order.shuffle(rng);
            let mut t = begin;
            for c in order {
                t = place(template, config, c, t, trace_begin, rng, values);
            }
            t
        }
    };
    // composites with no children still need a positive duration
    let end = if end <= begin { begin + 1 } else { end };
    values[slot.0] = [begin, end - begin, end];
    end
}

/// Child slots of a sequential slot in chain order.
fn chain(template: &InstanceTemplate, slot: SlotId) -> Vec<SlotId> {
    let model = template.model();
    let order = model.chain_order(template.slot(slot).activity);
    order
        .into_iter()
        .filter_map(|a| template.child_of_type(slot, a))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundled;

    #[test]
    fn constant_hlf_run_emits_18_records_per_trace() {
        let cfg = SimConfig {
            traces: 10,
            default_duration: Law::constant(500.0),
            ..SimConfig::default()
        };
        let out = simulate(&bundled::hlf(), &"E=1,V=1".parse().unwrap(), &cfg).unwrap();
        assert_eq!(out.records.len(), 180);
    }

    #[test]
    fn omitted_source_emits_nothing() {
        let cfg = SimConfig {
            traces: 5,
            omissions: vec![Omission {
                source: "client".into(),
                probability: 1.0,
                traces: Vec::new(),
            }],
            ..SimConfig::default()
        };
        let out = simulate(&bundled::hlf(), &"E=1,V=1".parse().unwrap(), &cfg).unwrap();
        assert!(out.records.iter().all(|r| r.source != "client"));
        assert!(!out.records.is_empty());
    }

    #[test]
    fn same_seed_same_output() {
        let cfg = SimConfig {
            traces: 20,
            seed: 7,
            ..SimConfig::default()
        };
        let b = "E=2,V=2".parse().unwrap();
        let x = simulate(&bundled::hlf(), &b, &cfg).unwrap();
        let y = simulate(&bundled::hlf(), &b, &cfg).unwrap();
        assert_eq!(x.records, y.records);
        assert_eq!(x.truth.traces, y.truth.traces);
    }
}

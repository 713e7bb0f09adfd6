//! Per-trace timelines: binding records to template slots, propagating
//! values along the rule catalog, and reducing fork replicas.

mod propagate;

use std::collections::BTreeMap;
use std::sync::Arc;

use fixedbitset::FixedBitSet;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ActivityKind, BindError, InstanceTemplate, SlotId, SyncSemantic};
use crate::observability::RuleId;
use crate::time::{Aspect, Micros};
use crate::trace::{ObservationRecord, TraceBundle};

pub use propagate::{propagate, DerivationPlan, MAX_COMBINATIONS, MAX_ROUNDS, MAX_VALUES_PER_NODE};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DerivationInput {
    pub slot: Arc<str>,
    pub aspect: Aspect,
    pub value: Micros,
    pub sources: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Provenance {
    Measured { source: String },
    Rule { rule: RuleId, inputs: Vec<DerivationInput> },
}

/// One value of one slot-aspect together with how it was obtained.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ValuedDerivation {
    #[serde(rename = "value_us")]
    pub value: Micros,
    #[serde(rename = "prov")]
    pub provenance: Provenance,
    /// Measuring sources the value ultimately depends on.
    pub sources: Vec<String>,
}

impl ValuedDerivation {
    pub fn is_measured(&self) -> bool {
        matches!(self.provenance, Provenance::Measured { .. })
    }

    /// Short label such as `measured:peer0` or `R1`.
    pub fn label(&self) -> String {
        match &self.provenance {
            Provenance::Measured { source } => format!("measured:{source}"),
            Provenance::Rule { rule, .. } => rule.to_string(),
        }
    }

    pub fn rule(&self) -> Option<&RuleId> {
        match &self.provenance {
            Provenance::Rule { rule, .. } => Some(rule),
            Provenance::Measured { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnboundRecord {
    pub record: ObservationRecord,
    pub reason: String,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DeriveError {
    #[error("trace {trace}: {source}")]
    AmbiguousBinding { trace: String, source: BindError },
    #[error("trace {trace}: replica `{slot}` has no resolved end, cannot rank")]
    UnresolvedReplicaEnd { trace: String, slot: String },
    #[error("timeline does not match the template: {0}")]
    TemplateMismatch(String),
}

/// The instance tree of one trace with every derivation of every
/// slot-aspect.
#[derive(Debug, Clone)]
pub struct Timeline {
    pub trace_id: String,
    template: Arc<InstanceTemplate>,
    entries: Vec<Vec<ValuedDerivation>>,
    ancestry: Vec<Vec<FixedBitSet>>,
    pub unresolved: Vec<UnboundRecord>,
    /// The bundle contained records assigned by collision recovery.
    pub repaired: bool,
    pub reduced: bool,
    pub diagnostics: Vec<String>,
}

impl Timeline {
    pub fn empty(trace_id: impl Into<String>, template: Arc<InstanceTemplate>) -> Self {
        let n = template.len() * 3;
        Timeline {
            trace_id: trace_id.into(),
            template,
            entries: vec![Vec::new(); n],
            ancestry: vec![Vec::new(); n],
            unresolved: Vec::new(),
            repaired: false,
            reduced: false,
            diagnostics: Vec::new(),
        }
    }

    pub fn template(&self) -> &Arc<InstanceTemplate> {
        &self.template
    }

    pub(crate) fn node_count(&self) -> usize {
        self.entries.len()
    }

    pub(crate) fn entries(&self, n: usize) -> &[ValuedDerivation] {
        &self.entries[n]
    }

    pub(crate) fn ancestry(&self, n: usize) -> &[FixedBitSet] {
        &self.ancestry[n]
    }

    pub fn derivations(&self, slot: SlotId, aspect: Aspect) -> &[ValuedDerivation] {
        &self.entries[propagate::node(slot, aspect)]
    }

    /// Adds a measured value; an identical (source, value) pair is kept once.
    pub fn push_measured(&mut self, slot: SlotId, aspect: Aspect, value: Micros, source: &str) {
        let n = propagate::node(slot, aspect);
        let d = ValuedDerivation {
            value,
            provenance: Provenance::Measured {
                source: source.to_string(),
            },
            sources: vec![source.to_string()],
        };
        if !self.entries[n].contains(&d) {
            self.entries[n].push(d);
            self.ancestry[n].push(FixedBitSet::with_capacity(self.entries.len()));
        }
    }

    pub(crate) fn push_derived(&mut self, slot: SlotId, aspect: Aspect, d: ValuedDerivation, ancestry: FixedBitSet) {
        let n = propagate::node(slot, aspect);
        self.entries[n].push(d);
        self.ancestry[n].push(ancestry);
    }

    pub(crate) fn sort_entries(&mut self) {
        for (e, a) in self.entries.iter_mut().zip(self.ancestry.iter_mut()) {
            let mut pairs: Vec<_> = e.drain(..).zip(a.drain(..)).collect();
            pairs.sort_by(|x, y| x.0.cmp(&y.0));
            for (d, anc) in pairs {
                e.push(d);
                a.push(anc);
            }
        }
    }

    /// Measured value if there is one (median over several), else the
    /// median of all derived values. Even counts use the floor of the mean
    /// of the two middle values.
    pub fn resolved(&self, slot: SlotId, aspect: Aspect) -> Option<Micros> {
        let ds = self.derivations(slot, aspect);
        let measured: Vec<Micros> = ds.iter().filter(|d| d.is_measured()).map(|d| d.value).collect();
        if !measured.is_empty() {
            return Some(median(measured));
        }
        if ds.is_empty() {
            return None;
        }
        Some(median(ds.iter().map(|d| d.value).collect()))
    }

    pub fn resolved_path(&self, path: &str, aspect: Aspect) -> Option<Micros> {
        self.resolved(self.template.find(path)?, aspect)
    }

    pub fn is_fully_resolved(&self) -> bool {
        self.template
            .ids()
            .all(|s| Aspect::ALL.iter().all(|&a| self.resolved(s, a).is_some()))
    }

    pub fn resolved_count(&self) -> usize {
        self.template
            .ids()
            .map(|s| Aspect::ALL.iter().filter(|&&a| self.resolved(s, a).is_some()).count())
            .sum()
    }

    pub fn derivation_count(&self) -> usize {
        self.entries.iter().map(Vec::len).sum()
    }

    /// Gaps of `before` edges: (predecessor, successor, successor begin
    /// minus predecessor end) when both ends resolve. Gapped relations only
    /// bound values, they never produce derivations.
    pub fn gap_bounds(&self) -> Vec<(SlotId, SlotId, Option<Micros>)> {
        let model = self.template.model();
        let mut out = Vec::new();
        for s in self.template.ids() {
            let a = self.template.slot(s).activity;
            for other in model.related(a, crate::model::Relation::Before) {
                if let Some(t) = self.template.sibling_of_type(s, other) {
                    let gap = match (self.resolved(s, Aspect::End), self.resolved(t, Aspect::Begin)) {
                        (Some(e), Some(b)) => Some(b - e),
                        _ => None,
                    };
                    out.push((s, t, gap));
                }
            }
        }
        out
    }
}

pub(crate) fn median(mut v: Vec<Micros>) -> Micros {
    v.sort_unstable();
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]).div_euclid(2)
    }
}

/// Installs a bundle's records as measured derivations.
pub fn instantiate(bundle: &TraceBundle, template: &Arc<InstanceTemplate>) -> Result<Timeline, DeriveError> {
    let mut t = Timeline::empty(bundle.trace_id.clone(), template.clone());
    t.repaired = bundle.recovered > 0;
    for r in &bundle.records {
        match template.bind(&r.activity, r.replica.as_deref()) {
            Ok(slot) => t.push_measured(slot, r.aspect, r.value_us, &r.source),
            Err(e @ BindError::Ambiguous { .. }) => {
                return Err(DeriveError::AmbiguousBinding {
                    trace: bundle.trace_id.clone(),
                    source: e,
                })
            }
            Err(e) => t.unresolved.push(UnboundRecord {
                record: r.clone(),
                reason: e.to_string(),
            }),
        }
    }
    Ok(t)
}

/// instantiate followed by propagate.
pub fn derive(bundle: &TraceBundle, plan: &DerivationPlan) -> Result<Timeline, DeriveError> {
    let mut t = instantiate(bundle, plan.template())?;
    propagate(&mut t, plan);
    Ok(t)
}

/// Keeps one replica under every replicated fork: the latest ending under
/// wait-for-all, the earliest under wait-for-any. Ties go to the smallest
/// discriminator.
pub fn reduce_replicas(timeline: &Timeline) -> Result<Timeline, DeriveError> {
    let template = &timeline.template;
    let model = template.model();
    let mut keep = vec![true; template.len()];
    for s in template.ids() {
        if !keep[s.0] || model.ty(template.slot(s).activity).kind != ActivityKind::Forked {
            continue;
        }
        let sync = model.ty(template.slot(s).activity).sync;
        let replicas: Vec<SlotId> = template
            .slot(s)
            .children
            .iter()
            .copied()
            .filter(|c| template.slot(*c).replica_index.is_some())
            .collect();
        if replicas.len() < 2 {
            continue;
        }
        let mut ranked = Vec::with_capacity(replicas.len());
        for &r in &replicas {
            let end = timeline.resolved(r, Aspect::End).ok_or_else(|| DeriveError::UnresolvedReplicaEnd {
                trace: timeline.trace_id.clone(),
                slot: template.slot(r).path.to_string(),
            })?;
            let key = match sync {
                Some(SyncSemantic::WaitForAny) => end,
                _ => -end,
            };
            ranked.push((key, template.slot(r).discriminator.clone(), r));
        }
        ranked.sort();
        let winner = ranked[0].2;
        for &r in &replicas {
            if r != winner {
                for d in template.subtree(r) {
                    keep[d.0] = false;
                }
            }
        }
    }
    if keep.iter().all(|&k| k) {
        let mut out = timeline.clone();
        out.reduced = true;
        return Ok(out);
    }
    let (reduced, map) = template.restrict(&keep);
    let reduced = Arc::new(reduced);
    let mut out = Timeline::empty(timeline.trace_id.clone(), reduced);
    out.unresolved = timeline.unresolved.clone();
    out.repaired = timeline.repaired;
    out.reduced = true;
    out.diagnostics = timeline.diagnostics.clone();
    for old in template.ids() {
        if let Some(new) = map[old.0] {
            for a in Aspect::ALL {
                let n_old = propagate::node(old, a);
                let n_new = propagate::node(new, a);
                out.entries[n_new] = timeline.entries[n_old].clone();
                out.ancestry[n_new] = vec![FixedBitSet::new(); timeline.entries[n_old].len()];
            }
        }
    }
    Ok(out)
}

/// JSON form of a timeline: `slots` maps path to aspect to derivations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimelineDoc {
    pub trace_id: String,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub reduced: bool,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub repaired: bool,
    pub slots: BTreeMap<String, BTreeMap<Aspect, Vec<ValuedDerivation>>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub unresolved: Vec<UnboundRecord>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub diagnostics: Vec<String>,
}

impl Timeline {
    pub fn to_doc(&self) -> TimelineDoc {
        let mut slots = BTreeMap::new();
        for s in self.template.ids() {
            let mut by_aspect = BTreeMap::new();
            for a in Aspect::ALL {
                let ds = self.derivations(s, a);
                if !ds.is_empty() {
                    by_aspect.insert(a, ds.to_vec());
                }
            }
            slots.insert(self.template.slot(s).path.to_string(), by_aspect);
        }
        TimelineDoc {
            trace_id: self.trace_id.clone(),
            reduced: self.reduced,
            repaired: self.repaired,
            slots,
            unresolved: self.unresolved.clone(),
            diagnostics: self.diagnostics.clone(),
        }
    }

    /// Rebuilds a timeline over `template`. Ancestry information is not
    /// serialized, so the result should not be propagated further.
    pub fn from_doc(doc: TimelineDoc, template: Arc<InstanceTemplate>) -> Result<Self, DeriveError> {
        let template = if doc.slots.len() < template.len() {
            let keep: Vec<bool> = template
                .slots()
                .iter()
                .map(|s| doc.slots.contains_key(&*s.path))
                .collect();
            Arc::new(template.restrict(&keep).0)
        } else {
            template
        };
        let mut t = Timeline::empty(doc.trace_id, template);
        t.reduced = doc.reduced;
        t.repaired = doc.repaired;
        t.unresolved = doc.unresolved;
        t.diagnostics = doc.diagnostics;
        for (path, aspects) in doc.slots {
            let slot = t
                .template
                .find(&path)
                .ok_or_else(|| DeriveError::TemplateMismatch(format!("unknown slot `{path}`")))?;
            for (a, ds) in aspects {
                let n = propagate::node(slot, a);
                t.ancestry[n] = vec![FixedBitSet::new(); ds.len()];
                t.entries[n] = ds;
            }
        }
        Ok(t)
    }
}

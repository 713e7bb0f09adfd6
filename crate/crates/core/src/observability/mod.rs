//! Type-level observability inference.
//!
//! Every catalog rule is instantiated once per matching activity type; the
//! saturation loop then fires instances whose inputs are all observed until
//! nothing changes. Rules are monotone, so the fixpoint is unique.

pub mod rules;

use std::collections::BTreeSet;

use serde::Serialize;

use crate::model::{ActivityId, ActivityModel, InstanceTemplate};
use crate::time::Aspect;

pub use rules::{Condition, DuplicateRule, Eval, InputPattern, Rule, RuleCatalog, RuleId, Selector};

pub type Node = (ActivityId, Aspect);

/// One rule applied to one activity type.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RuleInstance {
    pub rule: RuleId,
    pub target: Node,
    pub inputs: Vec<Node>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AspectState<'a> {
    Measured,
    Inferred(&'a BTreeSet<RuleId>),
    Unobserved,
}

/// Measured flags and inferring rules for every (type, aspect).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObservabilityStatus {
    measured: Vec<[bool; 3]>,
    inferred: Vec<[BTreeSet<RuleId>; 3]>,
}

impl ObservabilityStatus {
    pub fn is_measured(&self, id: ActivityId, aspect: Aspect) -> bool {
        self.measured[id.0][aspect.index()]
    }

    pub fn inferred_by(&self, id: ActivityId, aspect: Aspect) -> &BTreeSet<RuleId> {
        &self.inferred[id.0][aspect.index()]
    }

    pub fn is_observed(&self, id: ActivityId, aspect: Aspect) -> bool {
        self.is_measured(id, aspect) || !self.inferred_by(id, aspect).is_empty()
    }

    /// Measured wins for display; both may hold at once.
    pub fn state(&self, id: ActivityId, aspect: Aspect) -> AspectState<'_> {
        if self.is_measured(id, aspect) {
            AspectState::Measured
        } else if self.is_observed(id, aspect) {
            AspectState::Inferred(self.inferred_by(id, aspect))
        } else {
            AspectState::Unobserved
        }
    }

    pub fn type_count(&self) -> usize {
        self.measured.len()
    }

    pub fn observed(&self) -> BTreeSet<Node> {
        self.nodes().filter(|&(id, a)| self.is_observed(id, a)).collect()
    }

    pub fn unobserved(&self) -> BTreeSet<Node> {
        self.nodes().filter(|&(id, a)| !self.is_observed(id, a)).collect()
    }

    fn nodes(&self) -> impl Iterator<Item = Node> + '_ {
        (0..self.measured.len()).flat_map(|i| Aspect::ALL.map(|a| (ActivityId(i), a)))
    }

    /// Number of observed (slot, aspect) positions in an expanded template.
    pub fn observed_slot_aspects(&self, template: &InstanceTemplate) -> usize {
        template
            .slots()
            .iter()
            .map(|s| Aspect::ALL.iter().filter(|&&a| self.is_observed(s.activity, a)).count())
            .sum()
    }
}

/// Rule instances of a model. `edges` are the instances whose inputs are
/// all observed at the fixpoint; `candidates` holds every instance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DerivationGraph {
    pub edges: Vec<RuleInstance>,
    pub candidates: Vec<RuleInstance>,
}

impl DerivationGraph {
    pub fn incoming(&self, target: Node) -> impl Iterator<Item = &RuleInstance> {
        self.edges.iter().filter(move |e| e.target == target)
    }

    pub fn rules_used(&self) -> BTreeSet<RuleId> {
        self.edges.iter().map(|e| e.rule.clone()).collect()
    }
}

/// Every instance of every catalog rule over the model's types.
pub fn rule_instances(model: &ActivityModel, catalog: &RuleCatalog) -> Vec<RuleInstance> {
    let mut out = Vec::new();
    for id in model.ids() {
        for rule in catalog.rules() {
            for inputs in rule.class_inputs(model, id) {
                out.push(RuleInstance {
                    rule: rule.id.clone(),
                    target: (id, rule.target),
                    inputs,
                });
            }
        }
    }
    out
}

pub fn saturate(model: &ActivityModel) -> (ObservabilityStatus, DerivationGraph) {
    saturate_with(model, &RuleCatalog::standard())
}

pub fn saturate_with(model: &ActivityModel, catalog: &RuleCatalog) -> (ObservabilityStatus, DerivationGraph) {
    let instances = rule_instances(model, catalog);
    let order: Vec<usize> = (0..instances.len()).collect();
    saturate_instances(model, instances, &order)
}

/// Saturation visiting rule instances in the given order each pass. The
/// result does not depend on `order`; this entry point exists so that can
/// be tested.
pub fn saturate_in_order(
    model: &ActivityModel,
    catalog: &RuleCatalog,
    order: &[usize],
) -> (ObservabilityStatus, DerivationGraph) {
    saturate_instances(model, rule_instances(model, catalog), order)
}

fn saturate_instances(
    model: &ActivityModel,
    instances: Vec<RuleInstance>,
    order: &[usize],
) -> (ObservabilityStatus, DerivationGraph) {
    let n = model.len();
    let mut observed = vec![[false; 3]; n];
    let mut measured = vec![[false; 3]; n];
    for id in model.ids() {
        for &a in &model.ty(id).measured {
            measured[id.0][a.index()] = true;
            observed[id.0][a.index()] = true;
        }
    }
    let ready = |observed: &Vec<[bool; 3]>, inst: &RuleInstance| {
        inst.inputs.iter().all(|(id, a)| observed[id.0][a.index()])
    };
    loop {
        let mut changed = false;
        for &i in order {
            let inst = &instances[i];
            let (t, a) = inst.target;
            if !observed[t.0][a.index()] && ready(&observed, inst) {
                observed[t.0][a.index()] = true;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }

    let mut inferred: Vec<[BTreeSet<RuleId>; 3]> = vec![Default::default(); n];
    let mut edges = Vec::new();
    for inst in &instances {
        if ready(&observed, inst) {
            let (t, a) = inst.target;
            inferred[t.0][a.index()].insert(inst.rule.clone());
            edges.push(inst.clone());
        }
    }
    edges.sort();
    let mut candidates = instances;
    candidates.sort();
    (
        ObservabilityStatus { measured, inferred },
        DerivationGraph { edges, candidates },
    )
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GapSuggestion {
    pub rule: RuleId,
    /// Unobserved inputs as (activity name, aspect).
    pub missing: Vec<(String, Aspect)>,
}

/// An unobserved (type, aspect) and the rules that could reach it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GapReport {
    pub activity: String,
    pub aspect: Aspect,
    /// Ordered by number of missing inputs, fewest first.
    pub suggestions: Vec<GapSuggestion>,
}

pub fn instrumentation_gaps(
    model: &ActivityModel,
    status: &ObservabilityStatus,
    graph: &DerivationGraph,
) -> Vec<GapReport> {
    let mut out = Vec::new();
    for id in model.preorder() {
        for a in Aspect::ALL {
            if status.is_observed(id, a) {
                continue;
            }
            let mut suggestions: Vec<GapSuggestion> = graph
                .candidates
                .iter()
                .filter(|c| c.target == (id, a))
                .map(|c| {
                    let mut missing: Vec<(String, Aspect)> = c
                        .inputs
                        .iter()
                        .filter(|(i, asp)| !status.is_observed(*i, *asp))
                        .map(|(i, asp)| (model.ty(*i).name.clone(), *asp))
                        .collect();
                    missing.sort();
                    missing.dedup();
                    GapSuggestion {
                        rule: c.rule.clone(),
                        missing,
                    }
                })
                .collect();
            suggestions.sort_by(|x, y| {
                x.missing
                    .len()
                    .cmp(&y.missing.len())
                    .then_with(|| x.rule.cmp(&y.rule))
                    .then_with(|| x.missing.cmp(&y.missing))
            });
            suggestions.dedup();
            out.push(GapReport {
                activity: model.ty(id).name.clone(),
                aspect: a,
                suggestions,
            });
        }
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct NodeReport {
    pub activity: String,
    pub aspect: Aspect,
    pub status: &'static str,
    pub measured: bool,
    pub rules: Vec<RuleId>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EdgeReport {
    pub rule: RuleId,
    pub target: (String, Aspect),
    pub inputs: Vec<(String, Aspect)>,
}

/// Serializable view of a saturation result.
#[derive(Debug, Clone, Serialize)]
pub struct InferenceReport {
    pub schema_version: &'static str,
    pub model: String,
    pub nodes: Vec<(String, Aspect)>,
    pub edges: Vec<EdgeReport>,
    pub status: Vec<NodeReport>,
    pub gaps: Vec<GapReport>,
}

impl InferenceReport {
    pub fn new(model: &ActivityModel, status: &ObservabilityStatus, graph: &DerivationGraph) -> Self {
        let name = |(id, a): Node| (model.ty(id).name.clone(), a);
        let order = model.preorder();
        let nodes: Vec<Node> = order
            .iter()
            .flat_map(|&id| Aspect::ALL.map(|a| (id, a)))
            .collect();
        InferenceReport {
            schema_version: crate::SCHEMA_VERSION,
            model: model.name().to_string(),
            nodes: nodes.iter().map(|&n| name(n)).collect(),
            edges: graph
                .edges
                .iter()
                .map(|e| EdgeReport {
                    rule: e.rule.clone(),
                    target: name(e.target),
                    inputs: e.inputs.iter().map(|&n| name(n)).collect(),
                })
                .collect(),
            status: nodes
                .iter()
                .map(|&(id, a)| NodeReport {
                    activity: model.ty(id).name.clone(),
                    aspect: a,
                    status: match status.state(id, a) {
                        AspectState::Measured => "measured",
                        AspectState::Inferred(_) => "inferred",
                        AspectState::Unobserved => "unobserved",
                    },
                    measured: status.is_measured(id, a),
                    rules: status.inferred_by(id, a).iter().cloned().collect(),
                })
                .collect(),
            gaps: instrumentation_gaps(model, status, graph),
        }
    }
}

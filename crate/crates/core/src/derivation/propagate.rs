use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use fixedbitset::FixedBitSet;

use super::{DerivationInput, Provenance, Timeline, ValuedDerivation};
use crate::model::{InstanceTemplate, SlotId, SyncSemantic};
use crate::observability::{Eval, RuleCatalog, RuleId};
use crate::time::{Aspect, Micros};

/// Distinct values kept per slot-aspect.
pub const MAX_VALUES_PER_NODE: usize = 32;
/// Input combinations tried per rule instance and round.
pub const MAX_COMBINATIONS: usize = 256;
pub const MAX_ROUNDS: usize = 10_000;

pub(crate) type NodeIx = usize;

pub(crate) fn node(slot: SlotId, aspect: Aspect) -> NodeIx {
    slot.0 * 3 + aspect.index()
}

fn split(n: NodeIx) -> (SlotId, Aspect) {
    (SlotId(n / 3), Aspect::from_index(n % 3))
}

#[derive(Debug, Clone)]
struct PlannedRule {
    rule: RuleId,
    eval: Eval,
    sync: Option<SyncSemantic>,
    target: NodeIx,
    inputs: Vec<NodeIx>,
}

/// Rule instances over one instance template; shared by all traces that
/// use the template.
#[derive(Debug, Clone)]
pub struct DerivationPlan {
    template: Arc<InstanceTemplate>,
    rules: Vec<PlannedRule>,
    dependents: Vec<Vec<usize>>,
}

impl DerivationPlan {
    pub fn new(template: Arc<InstanceTemplate>, catalog: &RuleCatalog) -> Self {
        let mut rules = Vec::new();
        let model = template.model();
        for slot in template.ids() {
            let sync = model.ty(template.slot(slot).activity).sync;
            for r in catalog.rules() {
                for inputs in r.instance_inputs(&template, slot) {
                    rules.push(PlannedRule {
                        rule: r.id.clone(),
                        eval: r.eval,
                        sync,
                        target: node(slot, r.target),
                        inputs: inputs.into_iter().map(|(s, a)| node(s, a)).collect(),
                    });
                }
            }
        }
        let mut dependents = vec![Vec::new(); template.len() * 3];
        for (i, r) in rules.iter().enumerate() {
            for &n in &r.inputs {
                if dependents[n].last() != Some(&i) {
                    dependents[n].push(i);
                }
            }
        }
        DerivationPlan {
            template,
            rules,
            dependents,
        }
    }

    pub fn template(&self) -> &Arc<InstanceTemplate> {
        &self.template
    }

    pub fn instance_count(&self) -> usize {
        self.rules.len()
    }

    /// Same plan with rule instances visited in another order. Results do
    /// not depend on it.
    pub fn permuted(&self, order: &[usize]) -> Self {
        let rules: Vec<PlannedRule> = order.iter().map(|&i| self.rules[i].clone()).collect();
        let mut dependents = vec![Vec::new(); self.template.len() * 3];
        for (i, r) in rules.iter().enumerate() {
            for &n in &r.inputs {
                if dependents[n].last() != Some(&i) {
                    dependents[n].push(i);
                }
            }
        }
        DerivationPlan {
            template: self.template.clone(),
            rules,
            dependents,
        }
    }
}

/// One usable value of an input node: the entry with the smallest
/// ancestry among those carrying that value.
struct Choice<'a> {
    value: Micros,
    entry: &'a ValuedDerivation,
    ancestry: FixedBitSet,
}

fn better(a: &FixedBitSet, b: &FixedBitSet) -> bool {
    let (ca, cb) = (a.count_ones(..), b.count_ones(..));
    ca < cb || (ca == cb && a.ones().lt(b.ones()))
}

struct Staged {
    rule_ix: usize,
    value: Micros,
    ancestry: FixedBitSet,
    inputs: Vec<DerivationInput>,
    sources: Vec<String>,
}

/// Applies the plan's rules to a fixpoint. Each round evaluates the rule
/// instances whose inputs changed in the previous round against a snapshot,
/// so the result is independent of evaluation order. A derivation never
/// uses a value that was itself derived from the target.
pub fn propagate(timeline: &mut Timeline, plan: &DerivationPlan) {
    let n_nodes = plan.template.len() * 3;
    let template = &plan.template;
    let mut dirty: BTreeSet<NodeIx> = (0..n_nodes).filter(|&n| !timeline.entries(n).is_empty()).collect();
    // (rule instance, value) pairs already present
    let mut known: BTreeSet<(usize, Micros)> = BTreeSet::new();

    for round in 0.. {
        if round == MAX_ROUNDS {
            timeline.diagnostics.push(format!("propagation stopped after {MAX_ROUNDS} rounds"));
            break;
        }
        let mut todo: BTreeSet<usize> = BTreeSet::new();
        for &n in &dirty {
            todo.extend(plan.dependents[n].iter().copied());
        }
        let mut staged: BTreeMap<(NodeIx, usize, Micros), Staged> = BTreeMap::new();
        for ix in todo {
            let r = &plan.rules[ix];
            for s in evaluate(timeline, template, r, ix) {
                if known.contains(&(ix, s.value)) {
                    continue;
                }
                let key = (r.target, ix, s.value);
                match staged.get(&key) {
                    Some(old) if !better(&s.ancestry, &old.ancestry) => {}
                    _ => {
                        staged.insert(key, s);
                    }
                }
            }
        }
        if staged.is_empty() {
            break;
        }
        dirty.clear();
        for ((target, ix, value), s) in staged {
            let entries = timeline.entries(target);
            let fresh_value = !entries.iter().any(|e| e.value == value);
            if fresh_value {
                let distinct: BTreeSet<Micros> = entries.iter().map(|e| e.value).collect();
                if distinct.len() >= MAX_VALUES_PER_NODE {
                    continue;
                }
            }
            known.insert((ix, value));
            let (slot, aspect) = split(target);
            timeline.push_derived(
                slot,
                aspect,
                ValuedDerivation {
                    value,
                    provenance: Provenance::Rule {
                        rule: plan.rules[s.rule_ix].rule.clone(),
                        inputs: s.inputs,
                    },
                    sources: s.sources,
                },
                s.ancestry,
            );
            dirty.insert(target);
        }
    }
    timeline.sort_entries();
}

fn evaluate(timeline: &Timeline, template: &InstanceTemplate, r: &PlannedRule, rule_ix: usize) -> Vec<Staged> {
    let mut per_input: Vec<Vec<Choice<'_>>> = Vec::with_capacity(r.inputs.len());
    for &inp in &r.inputs {
        if inp == r.target {
            return Vec::new();
        }
        let mut by_value: BTreeMap<Micros, Choice<'_>> = BTreeMap::new();
        for (e, anc) in timeline.entries(inp).iter().zip(timeline.ancestry(inp)) {
            if anc.contains(r.target) {
                continue;
            }
            let mut a = anc.clone();
            a.insert(inp);
            match by_value.get(&e.value) {
                Some(c) if !better(&a, &c.ancestry) => {}
                _ => {
                    by_value.insert(
                        e.value,
                        Choice {
                            value: e.value,
                            entry: e,
                            ancestry: a,
                        },
                    );
                }
            }
        }
        if by_value.is_empty() {
            return Vec::new();
        }
        per_input.push(by_value.into_values().collect());
    }

    let mut out: BTreeMap<Micros, Staged> = BTreeMap::new();
    let mut idx = vec![0usize; per_input.len()];
    for _ in 0..MAX_COMBINATIONS {
        let picked: Vec<&Choice<'_>> = idx.iter().zip(&per_input).map(|(&i, c)| &c[i]).collect();
        let values: Vec<Micros> = picked.iter().map(|c| c.value).collect();
        let value = apply(r.eval, r.sync, &values);
        let mut ancestry = FixedBitSet::with_capacity(timeline.node_count());
        for c in &picked {
            ancestry.union_with(&c.ancestry);
        }
        let replace = match out.get(&value) {
            None => true,
            Some(old) => better(&ancestry, &old.ancestry),
        };
        if replace {
            let mut sources = BTreeSet::new();
            let inputs = picked
                .iter()
                .zip(&r.inputs)
                .map(|(c, &n)| {
                    sources.extend(c.entry.sources.iter().cloned());
                    let (slot, aspect) = split(n);
                    DerivationInput {
                        slot: template.slot(slot).path.clone(),
                        aspect,
                        value: c.value,
                        sources: c.entry.sources.clone(),
                    }
                })
                .collect();
            out.insert(
                value,
                Staged {
                    rule_ix,
                    value,
                    ancestry,
                    inputs,
                    sources: sources.into_iter().collect(),
                },
            );
        }
        // odometer over the choice lists
        let mut k = idx.len();
        loop {
            if k == 0 {
                return out.into_values().collect();
            }
            k -= 1;
            idx[k] += 1;
            if idx[k] < per_input[k].len() {
                break;
            }
            idx[k] = 0;
        }
    }
    out.into_values().collect()
}

fn apply(eval: Eval, sync: Option<SyncSemantic>, v: &[Micros]) -> Micros {
    match eval {
        Eval::Copy => v[0],
        Eval::FirstMinusRest => v[0] - v[1..].iter().sum::<Micros>(),
        Eval::Sum => v.iter().sum(),
        Eval::Min => *v.iter().min().expect("non-empty inputs"),
        Eval::Max => *v.iter().max().expect("non-empty inputs"),
        Eval::SyncJoin => match sync {
            Some(SyncSemantic::WaitForAny) => *v.iter().min().expect("non-empty inputs"),
            _ => *v.iter().max().expect("non-empty inputs"),
        },
    }
}

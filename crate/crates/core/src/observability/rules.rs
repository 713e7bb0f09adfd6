use std::borrow::Cow;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::model::{ActivityId, ActivityKind, ActivityModel, InstanceTemplate, Relation, SlotId};
use crate::time::Aspect;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RuleId(pub Cow<'static, str>);

impl RuleId {
    pub const fn new_static(s: &'static str) -> Self {
        RuleId(Cow::Borrowed(s))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for RuleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for RuleId {
    fn from(s: &str) -> Self {
        RuleId(Cow::Owned(s.to_string()))
    }
}

pub const R1: RuleId = RuleId::new_static("R1");
pub const R2: RuleId = RuleId::new_static("R2");
pub const R3: RuleId = RuleId::new_static("R3");
pub const B_FORK_UP: RuleId = RuleId::new_static("B-FORK-UP");
pub const B_STARTS: RuleId = RuleId::new_static("B-STARTS");
pub const B_STARTEDBY: RuleId = RuleId::new_static("B-STARTEDBY");
pub const B_METBY: RuleId = RuleId::new_static("B-METBY");
pub const B_FORK_DOWN: RuleId = RuleId::new_static("B-FORK-DOWN");
pub const D_ALT_SIBLING: RuleId = RuleId::new_static("D-ALT-SIBLING");
pub const D_ALT_SUM: RuleId = RuleId::new_static("D-ALT-SUM");
pub const E_MEETS: RuleId = RuleId::new_static("E-MEETS");
pub const E_FINISHES: RuleId = RuleId::new_static("E-FINISHES");
pub const E_FINISHEDBY: RuleId = RuleId::new_static("E-FINISHEDBY");
pub const E_FORK_UP: RuleId = RuleId::new_static("E-FORK-UP");

/// Which activities a rule applies to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Condition {
    Any,
    Kind(ActivityKind),
    ParentKind(ActivityKind),
}

/// Where an input is read from, relative to the target activity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Selector {
    SelfType,
    /// Every activity reached by one edge of this relation (one rule
    /// instance per target).
    Related(Relation),
    Parent,
    /// All children, as one group.
    AllChildren,
    /// All siblings except the target, as one group.
    OtherSiblings,
}

impl Selector {
    fn is_group(self) -> bool {
        matches!(self, Selector::AllChildren | Selector::OtherSiblings)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InputPattern {
    pub selector: Selector,
    pub aspect: Aspect,
}

/// How the input values combine into the target value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Eval {
    Copy,
    /// First input minus the sum of the others.
    FirstMinusRest,
    Sum,
    Min,
    Max,
    /// Max under wait-for-all, min under wait-for-any.
    SyncJoin,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rule {
    pub id: RuleId,
    pub target: Aspect,
    pub condition: Condition,
    pub inputs: Vec<InputPattern>,
    pub eval: Eval,
}

impl Rule {
    pub fn new(id: RuleId, target: Aspect, condition: Condition, eval: Eval) -> Self {
        Rule {
            id,
            target,
            condition,
            inputs: Vec::new(),
            eval,
        }
    }

    pub fn input(mut self, selector: Selector, aspect: Aspect) -> Self {
        self.inputs.push(InputPattern { selector, aspect });
        self
    }

    fn applies(&self, kind: ActivityKind, parent_kind: Option<ActivityKind>) -> bool {
        match self.condition {
            Condition::Any => true,
            Condition::Kind(k) => kind == k,
            Condition::ParentKind(k) => parent_kind == Some(k),
        }
    }

    /// All input lists of this rule for `target` at type level.
    pub fn class_inputs(&self, model: &ActivityModel, target: ActivityId) -> Vec<Vec<(ActivityId, Aspect)>> {
        let parent_kind = model.parent(target).map(|p| model.ty(p).kind);
        if !self.applies(model.ty(target).kind, parent_kind) {
            return Vec::new();
        }
        expand(&self.inputs, |sel| match sel {
            Selector::SelfType => vec![target],
            Selector::Related(rel) => model.related(target, rel).collect(),
            Selector::Parent => model.parent(target).into_iter().collect(),
            Selector::AllChildren => model.children(target).to_vec(),
            Selector::OtherSiblings => model.siblings(target).collect(),
        })
    }

    /// All input lists of this rule for `target` at instance level.
    pub fn instance_inputs(&self, template: &InstanceTemplate, target: SlotId) -> Vec<Vec<(SlotId, Aspect)>> {
        let model = template.model();
        let slot = template.slot(target);
        let parent_kind = slot.parent.map(|p| model.ty(template.slot(p).activity).kind);
        if !self.applies(model.ty(slot.activity).kind, parent_kind) {
            return Vec::new();
        }
        expand(&self.inputs, |sel| match sel {
            Selector::SelfType => vec![target],
            Selector::Related(rel) => related_slots(template, target, rel),
            Selector::Parent => slot.parent.into_iter().collect(),
            Selector::AllChildren => slot.children.clone(),
            Selector::OtherSiblings => match slot.parent {
                Some(p) => template
                    .slot(p)
                    .children
                    .iter()
                    .copied()
                    .filter(|&c| c != target)
                    .collect(),
                None => Vec::new(),
            },
        })
    }
}

/// Slots reached from `slot` through model edges of `rel`.
pub(crate) fn related_slots(template: &InstanceTemplate, slot: SlotId, rel: Relation) -> Vec<SlotId> {
    let model = template.model();
    let s = template.slot(slot);
    model
        .related(s.activity, rel)
        .flat_map(|other| -> Vec<SlotId> {
            match rel {
                Relation::Meets | Relation::MetBy | Relation::Before | Relation::After => {
                    template.sibling_of_type(slot, other).into_iter().collect()
                }
                Relation::StartsParent | Relation::FinishesParent | Relation::HasParentActivity => s
                    .parent
                    .filter(|&p| template.slot(p).activity == other)
                    .into_iter()
                    .collect(),
                Relation::StartedBySub | Relation::FinishedBySub | Relation::HasSubactivity => s
                    .children
                    .iter()
                    .copied()
                    .filter(|&c| template.slot(c).activity == other)
                    .collect(),
            }
        })
        .collect()
}

/// Cartesian product over single-valued selectors; group selectors
/// contribute all their members to every combination.
fn expand<N: Copy>(inputs: &[InputPattern], resolve: impl Fn(Selector) -> Vec<N>) -> Vec<Vec<(N, Aspect)>> {
    let mut combos: Vec<Vec<(N, Aspect)>> = vec![Vec::new()];
    for p in inputs {
        let found = resolve(p.selector);
        if p.selector.is_group() {
            if found.is_empty() && p.selector == Selector::AllChildren {
                return Vec::new();
            }
            for c in &mut combos {
                c.extend(found.iter().map(|&n| (n, p.aspect)));
            }
        } else {
            if found.is_empty() {
                return Vec::new();
            }
            combos = combos
                .into_iter()
                .flat_map(|c| {
                    found.iter().map(move |&n| {
                        let mut c = c.clone();
                        c.push((n, p.aspect));
                        c
                    })
                })
                .collect();
        }
    }
    combos
}

/// The set of rules saturation and propagation work with.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RuleCatalog {
    rules: Vec<Rule>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("rule `{0}` is already registered")]
pub struct DuplicateRule(pub RuleId);

impl RuleCatalog {
    pub fn empty() -> Self {
        RuleCatalog { rules: Vec::new() }
    }

    /// The built-in identity, begin, duration and end rules.
    pub fn standard() -> Self {
        use Aspect::{Begin as B, Duration as D, End as E};
        use Condition::*;
        use Selector::*;
        let rules = vec![
            Rule::new(R1, B, Any, Eval::FirstMinusRest).input(SelfType, E).input(SelfType, D),
            Rule::new(R2, D, Any, Eval::FirstMinusRest).input(SelfType, E).input(SelfType, B),
            Rule::new(R3, E, Any, Eval::Sum).input(SelfType, B).input(SelfType, D),
            Rule::new(B_FORK_UP, B, Kind(ActivityKind::Forked), Eval::Min).input(AllChildren, B),
            Rule::new(B_STARTS, B, Any, Eval::Copy).input(Related(Relation::StartsParent), B),
            Rule::new(B_STARTEDBY, B, Any, Eval::Copy).input(Related(Relation::StartedBySub), B),
            Rule::new(B_METBY, B, Any, Eval::Copy).input(Related(Relation::MetBy), E),
            Rule::new(B_FORK_DOWN, B, ParentKind(ActivityKind::Forked), Eval::Copy).input(Parent, B),
            Rule::new(D_ALT_SIBLING, D, ParentKind(ActivityKind::Alternating), Eval::FirstMinusRest)
                .input(Parent, D)
                .input(OtherSiblings, D),
            Rule::new(D_ALT_SUM, D, Kind(ActivityKind::Alternating), Eval::Sum).input(AllChildren, D),
            Rule::new(E_MEETS, E, Any, Eval::Copy).input(Related(Relation::Meets), B),
            Rule::new(E_FINISHES, E, Any, Eval::Copy).input(Related(Relation::FinishesParent), E),
            Rule::new(E_FINISHEDBY, E, Any, Eval::Copy).input(Related(Relation::FinishedBySub), E),
            Rule::new(E_FORK_UP, E, Kind(ActivityKind::Forked), Eval::SyncJoin).input(AllChildren, E),
        ];
        RuleCatalog { rules }
    }

    pub fn register(&mut self, rule: Rule) -> Result<(), DuplicateRule> {
        if self.get(&rule.id).is_some() {
            return Err(DuplicateRule(rule.id));
        }
        self.rules.push(rule);
        Ok(())
    }

    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    pub fn get(&self, id: &RuleId) -> Option<&Rule> {
        self.rules.iter().find(|r| &r.id == id)
    }
}

impl Default for RuleCatalog {
    fn default() -> Self {
        Self::standard()
    }
}

use std::collections::BTreeSet;
use std::fmt;

use serde::Serialize;

use super::types::{ActivityId, ActivityKind, ActivityModel, Relation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum ViolationCode {
    /// Sequential parent without exactly one starting and one finishing child.
    W1,
    /// Starting child preceded by a sibling, or finishing child followed by one.
    W2,
    /// Sequential siblings do not form a single chain.
    W3,
    /// Forked parent with too few children or no sync semantic.
    W4,
    /// Atomic activity with children.
    W5,
    /// Relation stored without its inverse.
    W6,
}

impl fmt::Display for ViolationCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub code: ViolationCode,
    pub activity: String,
    pub detail: String,
}

/// Runs the named structural checks. An empty result means well formed.
pub fn validate_well_formedness(model: &ActivityModel) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |code, id: ActivityId, detail: String| {
        out.push(Violation {
            code,
            activity: model.ty(id).name.clone(),
            detail,
        })
    };

    for id in model.preorder() {
        let ty = model.ty(id);
        let kids = model.children(id);

        if ty.kind == ActivityKind::Atomic && !kids.is_empty() {
            push(ViolationCode::W5, id, format!("atomic activity has {} children", kids.len()));
        }

        if ty.kind == ActivityKind::Sequential && !kids.is_empty() {
            let starts: Vec<_> = model.related(id, Relation::StartedBySub).collect();
            let finishes: Vec<_> = model.related(id, Relation::FinishedBySub).collect();
            for (what, set) in [("starting", &starts), ("finishing", &finishes)] {
                if set.len() != 1 || !kids.contains(&set[0]) {
                    push(
                        ViolationCode::W1,
                        id,
                        format!("expected one {what} child, found {}", set.len()),
                    );
                }
            }
            if let [s] = starts.as_slice() {
                if model.related(*s, Relation::MetBy).chain(model.related(*s, Relation::After)).next().is_some() {
                    push(
                        ViolationCode::W2,
                        *s,
                        "starting child is preceded by a sibling".into(),
                    );
                }
            }
            if let [f] = finishes.as_slice() {
                if model.related(*f, Relation::Meets).chain(model.related(*f, Relation::Before)).next().is_some() {
                    push(
                        ViolationCode::W2,
                        *f,
                        "finishing child is followed by a sibling".into(),
                    );
                }
            }
            if let Some(detail) = chain_defect(model, kids) {
                push(ViolationCode::W3, id, detail);
            }
        }

        if ty.kind == ActivityKind::Forked {
            let replicated = kids.len() == 1 && model.ty(kids[0]).multiplicity.is_some();
            if kids.len() < 2 && !replicated {
                push(
                    ViolationCode::W4,
                    id,
                    format!("forked activity has {} children", kids.len()),
                );
            }
            if ty.sync.is_none() {
                push(ViolationCode::W4, id, "forked activity has no sync semantic".into());
            }
        } else if ty.sync.is_some() {
            push(ViolationCode::W4, id, "sync semantic on a non-forked activity".into());
        }
        if ty.multiplicity.is_some() {
            let parent_forked = model
                .parent(id)
                .is_some_and(|p| model.ty(p).kind == ActivityKind::Forked);
            if !parent_forked {
                push(ViolationCode::W4, id, "multiplicity outside a forked parent".into());
            }
        }
    }

    for e in model.edges() {
        if !model.edges().contains(&e.inverse()) {
            push(
                ViolationCode::W6,
                e.from,
                format!("`{}` to `{}` has no inverse", e.rel, model.ty(e.to).name),
            );
        }
        if e.rel.is_sibling() && (model.parent(e.from).is_none() || model.parent(e.from) != model.parent(e.to)) {
            push(
                ViolationCode::W3,
                e.from,
                format!("`{}` relates to non-sibling `{}`", e.rel, model.ty(e.to).name),
            );
        }
    }
    out
}

/// Checks that forward `meets`/`before` edges order `kids` as one path.
fn chain_defect(model: &ActivityModel, kids: &[ActivityId]) -> Option<String> {
    if kids.len() < 2 {
        return None;
    }
    let succ = |k: ActivityId| -> Vec<ActivityId> {
        model
            .related(k, Relation::Meets)
            .chain(model.related(k, Relation::Before))
            .filter(|n| kids.contains(n))
            .collect()
    };
    let mut has_pred = BTreeSet::new();
    for &k in kids {
        let s = succ(k);
        if s.len() > 1 {
            return Some(format!("`{}` has {} successors", model.ty(k).name, s.len()));
        }
        for n in s {
            if !has_pred.insert(n) {
                return Some(format!("`{}` has several predecessors", model.ty(n).name));
            }
        }
    }
    let heads: Vec<_> = kids.iter().filter(|k| !has_pred.contains(k)).collect();
    let [&head] = heads.as_slice() else {
        return Some(format!("siblings form {} chains", heads.len().max(1)));
    };
    let mut seen = BTreeSet::from([head]);
    let mut cur = head;
    while let Some(n) = succ(cur).first().copied() {
        if !seen.insert(n) {
            return Some("sibling chain is cyclic".into());
        }
        cur = n;
    }
    (seen.len() != kids.len()).then(|| {
        format!("chain covers {} of {} siblings", seen.len(), kids.len())
    })
}

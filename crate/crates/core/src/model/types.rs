use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::time::Aspect;

/// Index of an activity type inside an [`ActivityModel`].
///
/// Ids are assigned in pre-order from the root, so children of a parent
/// always appear in declaration order when sorted by id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ActivityId(pub usize);

impl fmt::Display for ActivityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivityKind {
    Atomic,
    Sequential,
    Forked,
    Alternating,
    Unrefined,
}

impl ActivityKind {
    pub fn is_composite(self) -> bool {
        matches!(
            self,
            ActivityKind::Sequential | ActivityKind::Forked | ActivityKind::Alternating
        )
    }
}

/// Join condition of a forked activity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SyncSemantic {
    #[serde(rename = "all")]
    WaitForAll,
    #[serde(rename = "any")]
    WaitForAny,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActivityType {
    pub name: String,
    pub kind: ActivityKind,
    pub sync: Option<SyncSemantic>,
    pub service: Option<String>,
    pub measured: BTreeSet<Aspect>,
    /// Name of the binding parameter that replicates this type under its
    /// forked parent.
    pub multiplicity: Option<String>,
}

impl ActivityType {
    pub fn new(name: impl Into<String>, kind: ActivityKind) -> Self {
        ActivityType {
            name: name.into(),
            kind,
            sync: None,
            service: None,
            measured: BTreeSet::new(),
            multiplicity: None,
        }
    }

    pub fn is_measured(&self, aspect: Aspect) -> bool {
        self.measured.contains(&aspect)
    }
}

/// Structural and Allen-style relations between activity types.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Relation {
    HasSubactivity,
    HasParentActivity,
    StartsParent,
    FinishesParent,
    StartedBySub,
    FinishedBySub,
    Meets,
    MetBy,
    Before,
    After,
}

impl Relation {
    pub fn inverse(self) -> Relation {
        use Relation::*;
        match self {
            HasSubactivity => HasParentActivity,
            HasParentActivity => HasSubactivity,
            StartsParent => StartedBySub,
            StartedBySub => StartsParent,
            FinishesParent => FinishedBySub,
            FinishedBySub => FinishesParent,
            Meets => MetBy,
            MetBy => Meets,
            Before => After,
            After => Before,
        }
    }

    pub fn is_sibling(self) -> bool {
        matches!(
            self,
            Relation::Meets | Relation::MetBy | Relation::Before | Relation::After
        )
    }

    pub fn as_str(self) -> &'static str {
        use Relation::*;
        match self {
            HasSubactivity => "hasSubactivity",
            HasParentActivity => "hasParentActivity",
            StartsParent => "startsParent",
            FinishesParent => "finishesParent",
            StartedBySub => "startedBySub",
            FinishedBySub => "finishedBySub",
            Meets => "meets",
            MetBy => "metBy",
            Before => "before",
            After => "after",
        }
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RelationEdge {
    pub from: ActivityId,
    pub rel: Relation,
    pub to: ActivityId,
}

impl RelationEdge {
    pub fn new(from: ActivityId, rel: Relation, to: ActivityId) -> Self {
        RelationEdge { from, rel, to }
    }

    pub fn inverse(&self) -> RelationEdge {
        RelationEdge::new(self.to, self.rel.inverse(), self.from)
    }
}

/// A merged, immutable activity model.
///
/// The parent/child tree is taken from the `hasSubactivity` edges; every
/// other relation is kept verbatim so that well-formedness checks can look
/// at exactly what was declared.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActivityModel {
    name: String,
    types: Vec<ActivityType>,
    edges: BTreeSet<RelationEdge>,
    root: ActivityId,
    aliases: BTreeMap<String, ActivityId>,
    parent: Vec<Option<ActivityId>>,
    children: Vec<Vec<ActivityId>>,
    by_name: BTreeMap<String, ActivityId>,
}

impl ActivityModel {
    /// Builds a model from raw parts without running the loader.
    ///
    /// Only the hard structural invariants are enforced here (edge endpoints
    /// exist, a single root, parent links form a tree, unique names).
    /// Everything else is left to [`crate::model::validate_well_formedness`],
    /// which is what makes mutation testing of single defects possible.
    pub fn from_parts(
        name: impl Into<String>,
        types: Vec<ActivityType>,
        edges: impl IntoIterator<Item = RelationEdge>,
        aliases: BTreeMap<String, ActivityId>,
    ) -> Result<Self, ModelError> {
        let edges: BTreeSet<RelationEdge> = edges.into_iter().collect();
        let n = types.len();
        if n == 0 {
            return Err(ModelError::Empty);
        }
        let mut by_name = BTreeMap::new();
        for (i, t) in types.iter().enumerate() {
            if by_name.insert(t.name.clone(), ActivityId(i)).is_some() {
                return Err(ModelError::DuplicateName(t.name.clone()));
            }
        }
        for (alias, id) in &aliases {
            if id.0 >= n {
                return Err(ModelError::UnresolvedReference(alias.clone()));
            }
        }
        for e in &edges {
            for end in [e.from, e.to] {
                if end.0 >= n {
                    return Err(ModelError::UnresolvedReference(end.to_string()));
                }
            }
        }
        let mut parent: Vec<Option<ActivityId>> = vec![None; n];
        let mut children = vec![Vec::new(); n];
        for e in edges.iter().filter(|e| e.rel == Relation::HasSubactivity) {
            if let Some(existing) = parent[e.to.0] {
                if existing != e.from {
                    return Err(ModelError::NotATree(format!(
                        "`{}` has two parents (`{}` and `{}`)",
                        types[e.to.0].name, types[existing.0].name, types[e.from.0].name
                    )));
                }
            }
            parent[e.to.0] = Some(e.from);
            children[e.from.0].push(e.to);
        }
        for c in &mut children {
            c.sort();
            c.dedup();
        }
        let roots: Vec<ActivityId> = (0..n)
            .filter(|&i| parent[i].is_none())
            .map(ActivityId)
            .collect();
        let root = match roots.as_slice() {
            [r] => *r,
            [] => return Err(ModelError::NotATree("no root activity".into())),
            many => {
                return Err(ModelError::MultipleRoots(
                    many.iter().map(|r| types[r.0].name.clone()).collect(),
                ))
            }
        };
        // every type must hang below the root, otherwise there is a cycle
        let mut seen = vec![false; n];
        let mut stack = vec![root];
        while let Some(id) = stack.pop() {
            if std::mem::replace(&mut seen[id.0], true) {
                return Err(ModelError::NotATree("cycle in parent links".into()));
            }
            stack.extend(children[id.0].iter().copied());
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(ModelError::NotATree(format!(
                "`{}` is not reachable from the root",
                types[i].name
            )));
        }
        Ok(ActivityModel {
            name: name.into(),
            types,
            edges,
            root,
            aliases,
            parent,
            children,
            by_name,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn len(&self) -> usize {
        self.types.len()
    }

    pub fn is_empty(&self) -> bool {
        self.types.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ActivityId> + '_ {
        (0..self.types.len()).map(ActivityId)
    }

    pub fn types(&self) -> &[ActivityType] {
        &self.types
    }

    pub fn ty(&self, id: ActivityId) -> &ActivityType {
        &self.types[id.0]
    }

    pub fn root(&self) -> ActivityId {
        self.root
    }

    pub fn edges(&self) -> &BTreeSet<RelationEdge> {
        &self.edges
    }

    pub fn aliases(&self) -> &BTreeMap<String, ActivityId> {
        &self.aliases
    }

    pub fn parent(&self, id: ActivityId) -> Option<ActivityId> {
        self.parent[id.0]
    }

    pub fn children(&self, id: ActivityId) -> &[ActivityId] {
        &self.children[id.0]
    }

    pub fn is_leaf(&self, id: ActivityId) -> bool {
        self.children[id.0].is_empty()
    }

    /// Resolves a declared name or an alias.
    pub fn id_of(&self, name: &str) -> Option<ActivityId> {
        self.by_name
            .get(name)
            .or_else(|| self.aliases.get(name))
            .copied()
    }

    pub fn has_edge(&self, from: ActivityId, rel: Relation, to: ActivityId) -> bool {
        self.edges.contains(&RelationEdge::new(from, rel, to))
    }

    /// Targets of `rel` edges leaving `from`.
    pub fn related(&self, from: ActivityId, rel: Relation) -> impl Iterator<Item = ActivityId> + '_ {
        let lo = RelationEdge::new(from, rel, ActivityId(0));
        let hi = RelationEdge::new(from, rel, ActivityId(usize::MAX));
        self.edges.range(lo..=hi).map(|e| e.to)
    }

    pub fn siblings(&self, id: ActivityId) -> impl Iterator<Item = ActivityId> + '_ {
        self.parent(id)
            .map(|p| self.children(p))
            .unwrap_or(&[])
            .iter()
            .copied()
            .filter(move |&s| s != id)
    }

    /// Names from the root down to `id`, joined with `/`.
    pub fn type_path(&self, id: ActivityId) -> String {
        let mut names = vec![self.types[id.0].name.as_str()];
        let mut cur = id;
        while let Some(p) = self.parent[cur.0] {
            names.push(self.types[p.0].name.as_str());
            cur = p;
        }
        names.reverse();
        names.join("/")
    }

    /// Resolves a `/`-separated type path (replica indices are ignored).
    pub fn id_of_path(&self, path: &str) -> Option<ActivityId> {
        let mut segments = path.split('/').map(strip_replica_index);
        let first = self.id_of(segments.next()?)?;
        if first != self.root {
            // a bare type name is accepted as a path too
            return if path.contains('/') { None } else { Some(first) };
        }
        let mut cur = first;
        for seg in segments {
            let id = self.id_of(seg)?;
            if self.parent(id) != Some(cur) {
                return None;
            }
            cur = id;
        }
        Some(cur)
    }

    /// Pre-order walk from the root.
    pub fn preorder(&self) -> Vec<ActivityId> {
        let mut out = Vec::with_capacity(self.types.len());
        let mut stack = vec![self.root];
        while let Some(id) = stack.pop() {
            out.push(id);
            stack.extend(self.children(id).iter().rev().copied());
        }
        out
    }

    /// Children of a sequential parent in chain order (following
    /// `meets`/`before` from the starting child). Falls back to declaration
    /// order when the chain is not well formed.
    pub fn chain_order(&self, parent: ActivityId) -> Vec<ActivityId> {
        let kids = self.children(parent);
        let start = self.related(parent, Relation::StartedBySub).next();
        if let Some(mut cur) = start {
            let mut order = vec![cur];
            while order.len() < kids.len() {
                let next = self
                    .related(cur, Relation::Meets)
                    .chain(self.related(cur, Relation::Before))
                    .find(|n| kids.contains(n) && !order.contains(n));
                match next {
                    Some(n) => {
                        order.push(n);
                        cur = n;
                    }
                    None => break,
                }
            }
            if order.len() == kids.len() {
                return order;
            }
        }
        kids.to_vec()
    }

    /// Total number of measured (type, aspect) flags.
    pub fn measured_count(&self) -> usize {
        self.types.iter().map(|t| t.measured.len()).sum()
    }

    /// Returns a copy with different measured flags.
    pub fn with_measured(&self, measured: impl Fn(ActivityId, &ActivityType) -> BTreeSet<Aspect>) -> Self {
        let mut out = self.clone();
        for (i, t) in out.types.iter_mut().enumerate() {
            t.measured = measured(ActivityId(i), &self.types[i]);
        }
        out
    }
}

pub(crate) fn strip_replica_index(seg: &str) -> &str {
    match seg.find('[') {
        Some(i) if seg.ends_with(']') => &seg[..i],
        _ => seg,
    }
}

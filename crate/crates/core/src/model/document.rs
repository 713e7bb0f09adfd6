//! The JSON model document format and the multi-file loader.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::{Component, Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::types::{
    ActivityId, ActivityKind, ActivityModel, ActivityType, Relation, RelationEdge, SyncSemantic,
};
use super::ModelError;
use crate::time::Aspect;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDocument {
    pub name: String,
    #[serde(default)]
    pub imports: Vec<String>,
    #[serde(default)]
    pub aliases: Vec<(String, String)>,
    #[serde(default)]
    pub activities: Vec<ActivityDecl>,
    #[serde(default)]
    pub relations: Vec<RelationDecl>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActivityDecl {
    pub name: String,
    pub kind: ActivityKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sync: Option<SyncSemantic>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub service: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub measured: Vec<Aspect>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub multiplicity: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<ActivityDecl>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelationDecl {
    pub from: String,
    pub rel: String,
    pub to: String,
}

impl ModelDocument {
    pub fn parse(text: &str) -> Result<Self, ModelError> {
        serde_json::from_str(text).map_err(|e| ModelError::Parse {
            origin: None,
            message: e.to_string(),
        })
    }

    /// Serializes a loaded model back into a single self-contained document.
    pub fn from_model(model: &ActivityModel) -> Self {
        fn decl(model: &ActivityModel, id: ActivityId) -> ActivityDecl {
            let t = model.ty(id);
            ActivityDecl {
                name: t.name.clone(),
                kind: t.kind,
                sync: t.sync,
                service: t.service.clone(),
                measured: t.measured.iter().copied().collect(),
                multiplicity: t.multiplicity.clone(),
                children: model.children(id).iter().map(|&c| decl(model, c)).collect(),
            }
        }
        let relations = model
            .edges()
            .iter()
            .filter(|e| matches!(e.rel, Relation::Meets | Relation::Before))
            .map(|e| RelationDecl {
                from: model.ty(e.from).name.clone(),
                rel: e.rel.as_str().to_string(),
                to: model.ty(e.to).name.clone(),
            })
            .collect();
        ModelDocument {
            name: model.name().to_string(),
            imports: Vec::new(),
            aliases: model
                .aliases()
                .iter()
                .map(|(a, id)| (a.clone(), model.ty(*id).name.clone()))
                .collect(),
            activities: vec![decl(model, model.root())],
            relations,
        }
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("model documents always serialize")
    }
}

type Reader = Box<dyn Fn(&Path) -> std::io::Result<String>>;

/// Collects model documents (following `imports`) and merges them.
///
/// Imports are resolved relative to the importing document's directory and
/// loaded before it; a document reachable through several import paths is
/// only merged once.
pub struct ModelLoader {
    read: Reader,
    docs: Vec<ModelDocument>,
    seen: HashSet<PathBuf>,
}

impl Default for ModelLoader {
    fn default() -> Self {
        Self::new()
    }
}

impl ModelLoader {
    pub fn new() -> Self {
        Self::with_reader(|p| std::fs::read_to_string(p))
    }

    /// Uses `read` instead of the filesystem, e.g. for embedded documents.
    pub fn with_reader(read: impl Fn(&Path) -> std::io::Result<String> + 'static) -> Self {
        ModelLoader {
            read: Box::new(read),
            docs: Vec::new(),
            seen: HashSet::new(),
        }
    }

    pub fn add_path(&mut self, path: impl AsRef<Path>) -> Result<&mut Self, ModelError> {
        let path = normalize(path.as_ref());
        if !self.seen.insert(path.clone()) {
            return Ok(self);
        }
        let text = (self.read)(&path).map_err(|e| ModelError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let doc = ModelDocument::parse(&text).map_err(|e| match e {
            ModelError::Parse { message, .. } => ModelError::Parse {
                origin: Some(path.display().to_string()),
                message,
            },
            other => other,
        })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        self.add_document_at(doc, &base)
    }

    /// Adds an in-memory document; its imports resolve against `base`.
    pub fn add_document_at(
        &mut self,
        doc: ModelDocument,
        base: &Path,
    ) -> Result<&mut Self, ModelError> {
        for import in &doc.imports {
            self.add_path(base.join(import))?;
        }
        self.docs.push(doc);
        Ok(self)
    }

    pub fn add_document(&mut self, doc: ModelDocument) -> Result<&mut Self, ModelError> {
        self.add_document_at(doc, Path::new("."))
    }

    pub fn finish(self) -> Result<ActivityModel, ModelError> {
        merge(self.docs)
    }
}

/// Loads and merges model files, resolving imports from the filesystem.
pub fn load_model_files<P: AsRef<Path>>(paths: &[P]) -> Result<ActivityModel, ModelError> {
    let mut loader = ModelLoader::new();
    for p in paths {
        loader.add_path(p)?;
    }
    loader.finish()
}

/// Merges already-parsed documents. Imports are resolved relative to the
/// current directory.
pub fn load_model(sources: &[ModelDocument]) -> Result<ActivityModel, ModelError> {
    let mut loader = ModelLoader::new();
    for doc in sources {
        loader.add_document(doc.clone())?;
    }
    loader.finish()
}

fn normalize(path: &Path) -> PathBuf {
    let mut out = PathBuf::new();
    for c in path.components() {
        match c {
            Component::CurDir => {}
            Component::ParentDir => {
                if !out.pop() {
                    out.push("..");
                }
            }
            other => out.push(other.as_os_str()),
        }
    }
    out
}

struct FlatDecl {
    name: String,
    kind: ActivityKind,
    sync: Option<SyncSemantic>,
    service: Option<String>,
    measured: Vec<Aspect>,
    multiplicity: Option<String>,
    parent: Option<String>,
    children: Vec<String>,
}

fn flatten(decl: &ActivityDecl, parent: Option<&str>, out: &mut Vec<FlatDecl>) {
    out.push(FlatDecl {
        name: decl.name.clone(),
        kind: decl.kind,
        sync: decl.sync,
        service: decl.service.clone(),
        measured: decl.measured.clone(),
        multiplicity: decl.multiplicity.clone(),
        parent: parent.map(str::to_string),
        children: decl.children.iter().map(|c| c.name.clone()).collect(),
    });
    for c in &decl.children {
        flatten(c, Some(&decl.name), out);
    }
}

/// Union-find over names; the representative is the smallest index.
struct Classes {
    index: BTreeMap<String, usize>,
    parent: Vec<usize>,
}

impl Classes {
    fn new() -> Self {
        Classes {
            index: BTreeMap::new(),
            parent: Vec::new(),
        }
    }

    fn intern(&mut self, name: &str) -> usize {
        if let Some(&i) = self.index.get(name) {
            return i;
        }
        let i = self.parent.len();
        self.parent.push(i);
        self.index.insert(name.to_string(), i);
        i
    }

    fn find(&mut self, mut i: usize) -> usize {
        while self.parent[i] != i {
            self.parent[i] = self.parent[self.parent[i]];
            i = self.parent[i];
        }
        i
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }

    fn class_of(&mut self, name: &str) -> Option<usize> {
        let i = *self.index.get(name)?;
        Some(self.find(i))
    }
}

#[derive(Default)]
struct MergedClass {
    names: BTreeSet<String>,
    declared: Vec<String>,
    canonical: Option<String>,
    kind: Option<ActivityKind>,
    sync: Option<SyncSemantic>,
    service: Option<String>,
    measured: BTreeSet<Aspect>,
    multiplicity: Option<String>,
    parents: BTreeSet<usize>,
    children: Option<Vec<String>>,
}

fn merge(docs: Vec<ModelDocument>) -> Result<ActivityModel, ModelError> {
    let name = docs
        .last()
        .map(|d| d.name.clone())
        .ok_or(ModelError::Empty)?;

    let mut flat = Vec::new();
    for doc in &docs {
        for a in &doc.activities {
            flatten(a, None, &mut flat);
        }
    }
    if flat.is_empty() {
        return Err(ModelError::Empty);
    }

    let mut classes = Classes::new();
    for d in &flat {
        classes.intern(&d.name);
    }
    for doc in &docs {
        for (a, b) in &doc.aliases {
            let (ia, ib) = (classes.intern(a), classes.intern(b));
            classes.union(ia, ib);
        }
    }

    let mut merged: BTreeMap<usize, MergedClass> = BTreeMap::new();
    let all_names: Vec<String> = classes.index.keys().cloned().collect();
    for n in &all_names {
        let c = classes.class_of(n).expect("interned");
        merged.entry(c).or_default().names.insert(n.clone());
    }

    for d in &flat {
        let c = classes.class_of(&d.name).expect("interned");
        let parent_class = d.parent.as_deref().map(|p| classes.class_of(p).expect("interned"));
        let m = merged.get_mut(&c).expect("class exists");
        m.declared.push(d.name.clone());
        if d.kind != ActivityKind::Unrefined {
            match m.kind {
                Some(k) if k != ActivityKind::Unrefined && k != d.kind => {
                    return Err(ModelError::ConflictingKind {
                        name: d.name.clone(),
                        first: k,
                        second: d.kind,
                    })
                }
                _ => {
                    m.kind = Some(d.kind);
                    m.canonical = Some(d.name.clone());
                }
            }
        } else if m.kind.is_none() {
            m.kind = Some(ActivityKind::Unrefined);
        }
        if !d.children.is_empty() {
            if m.children.is_some() {
                return Err(ModelError::ConflictingDefinition(format!(
                    "`{}` is refined by more than one declaration",
                    d.name
                )));
            }
            m.children = Some(d.children.clone());
            m.canonical = Some(d.name.clone());
        }
        merge_opt(&mut m.sync, d.sync, &d.name, "sync")?;
        merge_opt(&mut m.service, d.service.clone(), &d.name, "service")?;
        merge_opt(&mut m.multiplicity, d.multiplicity.clone(), &d.name, "multiplicity")?;
        m.measured.extend(d.measured.iter().copied());
        if let Some(p) = parent_class {
            m.parents.insert(p);
        }
    }

    // classes made only of alias names were never declared
    for m in merged.values() {
        if m.declared.is_empty() {
            let n = m.names.iter().next().cloned().unwrap_or_default();
            return Err(ModelError::UnresolvedReference(n));
        }
    }

    let mut roots = Vec::new();
    for (&c, m) in &merged {
        match m.parents.len() {
            0 => roots.push(c),
            1 => {}
            _ => {
                return Err(ModelError::NotATree(format!(
                    "`{}` is declared under more than one parent",
                    m.declared[0]
                )))
            }
        }
    }
    let root = match roots.as_slice() {
        [r] => *r,
        [] => return Err(ModelError::NotATree("no root activity".into())),
        many => {
            return Err(ModelError::MultipleRoots(
                many.iter()
                    .map(|c| canonical_name(&merged[c]))
                    .collect(),
            ))
        }
    };

    // pre-order id assignment following declared child order
    let mut order: Vec<usize> = Vec::new();
    let mut child_classes: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    let mut stack = vec![root];
    let mut visited = BTreeSet::new();
    while let Some(c) = stack.pop() {
        if !visited.insert(c) {
            return Err(ModelError::NotATree("cycle in activity nesting".into()));
        }
        order.push(c);
        let kids: Vec<usize> = match &merged[&c].children {
            Some(names) => names
                .iter()
                .map(|n| classes.class_of(n).expect("interned"))
                .collect(),
            None => Vec::new(),
        };
        stack.extend(kids.iter().rev().copied());
        child_classes.insert(c, kids);
    }
    if visited.len() != merged.len() {
        let stray = merged
            .iter()
            .find(|(c, _)| !visited.contains(*c))
            .map(|(_, m)| canonical_name(m))
            .unwrap_or_default();
        return Err(ModelError::NotATree(format!(
            "`{stray}` is not reachable from the root"
        )));
    }
    let id_of: BTreeMap<usize, ActivityId> = order
        .iter()
        .enumerate()
        .map(|(i, &c)| (c, ActivityId(i)))
        .collect();

    let mut types = Vec::with_capacity(order.len());
    let mut aliases = BTreeMap::new();
    for &c in &order {
        let m = &merged[&c];
        let canonical = canonical_name(m);
        let kind = m.kind.unwrap_or(ActivityKind::Unrefined);
        let has_children = m.children.as_ref().is_some_and(|v| !v.is_empty());
        if has_children && !kind.is_composite() {
            return Err(ModelError::Schema(format!(
                "`{canonical}` has children but is declared {kind:?}"
            )));
        }
        if m.sync.is_some() != (kind == ActivityKind::Forked) {
            return Err(ModelError::Schema(format!(
                "`{canonical}`: sync semantic is required for forked activities and only allowed there"
            )));
        }
        for n in &m.names {
            if n != &canonical {
                aliases.insert(n.clone(), id_of[&c]);
            }
        }
        types.push(ActivityType {
            name: canonical,
            kind,
            sync: m.sync,
            service: m.service.clone(),
            measured: m.measured.clone(),
            multiplicity: m.multiplicity.clone(),
        });
    }

    let mut edges = BTreeSet::new();
    let add = |e: RelationEdge, edges: &mut BTreeSet<RelationEdge>| {
        edges.insert(e);
        edges.insert(e.inverse());
    };
    for &c in &order {
        let pid = id_of[&c];
        let kids: Vec<ActivityId> = child_classes[&c].iter().map(|k| id_of[k]).collect();
        for &k in &kids {
            add(RelationEdge::new(pid, Relation::HasSubactivity, k), &mut edges);
            if types[k.0].multiplicity.is_some() && types[pid.0].kind != ActivityKind::Forked {
                return Err(ModelError::Schema(format!(
                    "`{}` carries a multiplicity but its parent is not forked",
                    types[k.0].name
                )));
            }
        }
        if types[pid.0].kind == ActivityKind::Sequential {
            if let (Some(&first), Some(&last)) = (kids.first(), kids.last()) {
                add(RelationEdge::new(pid, Relation::StartedBySub, first), &mut edges);
                add(RelationEdge::new(pid, Relation::FinishedBySub, last), &mut edges);
            }
        }
    }

    // explicit sibling relations
    let mut explicit: BTreeSet<(ActivityId, ActivityId)> = BTreeSet::new();
    let resolve = |classes: &mut Classes, n: &str| -> Result<ActivityId, ModelError> {
        classes
            .class_of(n)
            .and_then(|c| id_of.get(&c).copied())
            .ok_or_else(|| ModelError::UnresolvedReference(n.to_string()))
    };
    let parent_of = |id: ActivityId| -> Option<ActivityId> {
        child_classes
            .iter()
            .find(|(_, kids)| kids.iter().any(|k| id_of[k] == id))
            .map(|(p, _)| id_of[p])
    };
    for doc in &docs {
        for r in &doc.relations {
            let rel = parse_sibling_relation(&r.rel)?;
            let from = resolve(&mut classes, &r.from)?;
            let to = resolve(&mut classes, &r.to)?;
            let (pf, pt) = (parent_of(from), parent_of(to));
            if pf.is_none() || pf != pt || from == to {
                return Err(ModelError::InvalidRelation(format!(
                    "`{} {} {}` does not relate two siblings",
                    r.from, r.rel, r.to
                )));
            }
            let p = pf.expect("checked");
            if types[p.0].kind != ActivityKind::Sequential {
                return Err(ModelError::InvalidRelation(format!(
                    "`{} {} {}`: sibling ordering is only allowed under sequential parents",
                    r.from, r.rel, r.to
                )));
            }
            let e = match rel {
                Relation::MetBy | Relation::After => RelationEdge::new(to, rel.inverse(), from),
                _ => RelationEdge::new(from, rel, to),
            };
            explicit.insert((e.from.min(e.to), e.from.max(e.to)));
            add(e, &mut edges);
        }
    }
    for &c in &order {
        if types[id_of[&c].0].kind != ActivityKind::Sequential {
            continue;
        }
        let kids: Vec<ActivityId> = child_classes[&c].iter().map(|k| id_of[k]).collect();
        for w in kids.windows(2) {
            let key = (w[0].min(w[1]), w[0].max(w[1]));
            if !explicit.contains(&key) {
                add(RelationEdge::new(w[0], Relation::Meets, w[1]), &mut edges);
            }
        }
    }

    ActivityModel::from_parts(name, types, edges, aliases)
}

fn canonical_name(m: &MergedClass) -> String {
    m.canonical
        .clone()
        .unwrap_or_else(|| m.declared[0].clone())
}

fn merge_opt<T: PartialEq + Clone + std::fmt::Debug>(
    slot: &mut Option<T>,
    value: Option<T>,
    name: &str,
    field: &str,
) -> Result<(), ModelError> {
    match (slot.as_ref(), value) {
        (Some(a), Some(b)) if *a != b => Err(ModelError::ConflictingDefinition(format!(
            "`{name}`: conflicting {field} ({a:?} vs {b:?})"
        ))),
        (None, Some(b)) => {
            *slot = Some(b);
            Ok(())
        }
        _ => Ok(()),
    }
}

fn parse_sibling_relation(s: &str) -> Result<Relation, ModelError> {
    match s {
        "meets" => Ok(Relation::Meets),
        "metBy" => Ok(Relation::MetBy),
        "before" => Ok(Relation::Before),
        "after" => Ok(Relation::After),
        "during" | "contains" | "overlaps" | "overlappedBy" | "equal" | "equals" => {
            Err(ModelError::InvalidRelation(format!(
                "`{s}` is not a modelable relation"
            )))
        }
        other => Err(ModelError::InvalidRelation(format!(
            "`{other}` is not a sibling relation"
        ))),
    }
}

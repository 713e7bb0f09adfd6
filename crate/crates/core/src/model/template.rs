use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::types::{ActivityId, ActivityKind, ActivityModel};

/// Values for the multiplicity parameters of a model, e.g. `E=2,V=4`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Bindings(pub BTreeMap<String, i64>);

impl Bindings {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, param: impl Into<String>, value: i64) -> Self {
        self.0.insert(param.into(), value);
        self
    }

    pub fn get(&self, param: &str) -> Option<i64> {
        self.0.get(param).copied()
    }
}

impl FromStr for Bindings {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut out = Bindings::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| format!("expected NAME=VALUE, got `{part}`"))?;
            let v: i64 = v
                .trim()
                .parse()
                .map_err(|_| format!("binding `{part}` is not an integer"))?;
            out.0.insert(k.trim().to_string(), v);
        }
        Ok(out)
    }
}

impl fmt::Display for Bindings {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|(k, v)| format!("{k}={v}")).collect();
        f.write_str(&parts.join(","))
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TemplateError {
    #[error("multiplicity parameter `{0}` is not bound")]
    UnboundParameter(String),
    #[error("binding {param}={value} must be at least 1")]
    InvalidBinding { param: String, value: i64 },
    #[error("activity `{0}` is still unrefined")]
    Unrefined(String),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BindError {
    #[error("unknown activity `{0}`")]
    Unknown(String),
    #[error("`{activity}` matches {candidates} replicas and no replica was given")]
    Ambiguous { activity: String, candidates: usize },
    #[error("`{activity}` has no replica `{replica}`")]
    NoSuchReplica { activity: String, replica: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SlotId(pub usize);

/// One activity instance position in an expanded template.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Slot {
    /// Unique instance path, e.g. `A/B[2]/C`.
    pub path: Arc<str>,
    /// Type path with replica indices stripped.
    pub type_path: Arc<str>,
    pub activity: ActivityId,
    /// 1-based index when this slot is a replica of a multiplicity child.
    pub replica_index: Option<usize>,
    /// Service instance id of the innermost enclosing replica, e.g. `peer0`.
    pub discriminator: Option<String>,
    /// Component expected to emit the measurements of this slot.
    pub source: String,
    pub parent: Option<SlotId>,
    pub children: Vec<SlotId>,
}

/// A model tree with every multiplicity child expanded into its replicas.
#[derive(Debug, Clone)]
pub struct InstanceTemplate {
    model: Arc<ActivityModel>,
    bindings: Bindings,
    slots: Vec<Slot>,
    by_path: HashMap<Arc<str>, SlotId>,
    by_activity: Vec<Vec<SlotId>>,
}

pub fn expand_instance_template(
    model: &ActivityModel,
    bindings: &Bindings,
) -> Result<InstanceTemplate, TemplateError> {
    InstanceTemplate::expand(Arc::new(model.clone()), bindings)
}

struct Frame<'a> {
    id: ActivityId,
    parent: Option<SlotId>,
    prefix: String,
    replica_index: Option<usize>,
    /// (discriminator, service of the replica)
    replica: Option<(String, &'a str)>,
    service: Option<&'a str>,
}

impl InstanceTemplate {
    pub fn expand(model: Arc<ActivityModel>, bindings: &Bindings) -> Result<Self, TemplateError> {
        for t in model.types() {
            if t.kind == ActivityKind::Unrefined {
                return Err(TemplateError::Unrefined(t.name.clone()));
            }
            if let Some(p) = &t.multiplicity {
                match bindings.get(p) {
                    None => return Err(TemplateError::UnboundParameter(p.clone())),
                    Some(v) if v < 1 => {
                        return Err(TemplateError::InvalidBinding {
                            param: p.clone(),
                            value: v,
                        })
                    }
                    Some(_) => {}
                }
            }
        }

        let mut slots: Vec<Slot> = Vec::new();
        let root = model.root();
        let mut stack = vec![Frame {
            id: root,
            parent: None,
            prefix: String::new(),
            replica_index: None,
            replica: None,
            service: None,
        }];
        while let Some(f) = stack.pop() {
            let ty = model.ty(f.id);
            let service = ty.service.as_deref().or(f.service);
            let mut seg = ty.name.clone();
            let mut replica = f.replica.clone();
            if let Some(i) = f.replica_index {
                seg = format!("{seg}[{i}]");
                let base = service
                    .map(str::to_string)
                    .unwrap_or_else(|| ty.name.to_lowercase());
                let own = format!("{base}{}", i - 1);
                let disc = match &f.replica {
                    Some((outer, _)) => format!("{outer}/{own}"),
                    None => own,
                };
                replica = Some((disc, service.unwrap_or("")));
            }
            let path = if f.prefix.is_empty() {
                seg
            } else {
                format!("{}/{seg}", f.prefix)
            };
            let source = match (&replica, service) {
                (Some((disc, rs)), Some(s)) if s != *rs => format!("{s}@{disc}"),
                (Some((disc, _)), _) => disc.clone(),
                (None, Some(s)) => s.to_string(),
                (None, None) => "system".to_string(),
            };
            let sid = SlotId(slots.len());
            slots.push(Slot {
                type_path: Arc::from(model.type_path(f.id)),
                path: Arc::from(path.as_str()),
                activity: f.id,
                replica_index: f.replica_index,
                discriminator: replica.as_ref().map(|(d, _)| d.clone()),
                source,
                parent: f.parent,
                children: Vec::new(),
            });
            if let Some(p) = f.parent {
                slots[p.0].children.push(sid);
            }
            for &c in model.children(f.id).iter().rev() {
                let count = match &model.ty(c).multiplicity {
                    Some(p) => bindings.get(p).expect("checked above") as usize,
                    None => 0,
                };
                let indices: Vec<Option<usize>> = if count == 0 {
                    vec![None]
                } else {
                    (1..=count).rev().map(Some).collect()
                };
                for idx in indices {
                    stack.push(Frame {
                        id: c,
                        parent: Some(sid),
                        prefix: path.clone(),
                        replica_index: idx,
                        replica: replica.clone(),
                        service,
                    });
                }
            }
        }

        let mut by_activity = vec![Vec::new(); model.len()];
        let mut by_path = HashMap::with_capacity(slots.len());
        for (i, s) in slots.iter().enumerate() {
            by_activity[s.activity.0].push(SlotId(i));
            by_path.insert(s.path.clone(), SlotId(i));
        }
        Ok(InstanceTemplate {
            model,
            bindings: bindings.clone(),
            slots,
            by_path,
            by_activity,
        })
    }

    pub fn model(&self) -> &ActivityModel {
        &self.model
    }

    pub fn model_arc(&self) -> &Arc<ActivityModel> {
        &self.model
    }

    pub fn bindings(&self) -> &Bindings {
        &self.bindings
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// Number of (slot, aspect) positions.
    pub fn slot_aspect_count(&self) -> usize {
        self.slots.len() * 3
    }

    pub fn root(&self) -> SlotId {
        SlotId(0)
    }

    pub fn slots(&self) -> &[Slot] {
        &self.slots
    }

    pub fn ids(&self) -> impl Iterator<Item = SlotId> {
        (0..self.slots.len()).map(SlotId)
    }

    pub fn slot(&self, id: SlotId) -> &Slot {
        &self.slots[id.0]
    }

    pub fn find(&self, path: &str) -> Option<SlotId> {
        self.by_path.get(path).copied()
    }

    pub fn slots_of(&self, activity: ActivityId) -> &[SlotId] {
        &self.by_activity[activity.0]
    }

    /// The child slot of `parent` with the given activity type, when unique.
    pub fn child_of_type(&self, parent: SlotId, activity: ActivityId) -> Option<SlotId> {
        let mut it = self.slots[parent.0]
            .children
            .iter()
            .copied()
            .filter(|c| self.slots[c.0].activity == activity);
        let first = it.next()?;
        it.next().is_none().then_some(first)
    }

    /// Slot of `activity` related to `slot` through a sibling edge.
    pub fn sibling_of_type(&self, slot: SlotId, activity: ActivityId) -> Option<SlotId> {
        self.child_of_type(self.slots[slot.0].parent?, activity)
    }

    /// Resolves an activity name (or alias, or type path) plus an optional
    /// replica discriminator to a slot.
    pub fn bind(&self, activity: &str, replica: Option<&str>) -> Result<SlotId, BindError> {
        let id = if activity.contains('/') {
            self.model.id_of_path(activity)
        } else {
            self.model.id_of(activity)
        }
        .ok_or_else(|| BindError::Unknown(activity.to_string()))?;
        let candidates = &self.by_activity[id.0];
        if let [only] = candidates.as_slice() {
            // a replica hint only matters inside a replicated subtree
            if self.slots[only.0].discriminator.is_none() || replica.is_none() {
                return Ok(*only);
            }
        }
        let Some(replica) = replica else {
            return Err(BindError::Ambiguous {
                activity: activity.to_string(),
                candidates: candidates.len(),
            });
        };
        candidates
            .iter()
            .copied()
            .find(|c| self.slots[c.0].discriminator.as_deref() == Some(replica))
            .ok_or_else(|| BindError::NoSuchReplica {
                activity: activity.to_string(),
                replica: replica.to_string(),
            })
    }

    /// Slots in pre-order below `id` (inclusive).
    pub fn subtree(&self, id: SlotId) -> Vec<SlotId> {
        let mut out = Vec::new();
        let mut stack = vec![id];
        while let Some(s) = stack.pop() {
            out.push(s);
            stack.extend(self.slots[s.0].children.iter().rev().copied());
        }
        out
    }

    /// Sub-template with only the kept slots (a kept slot's parent must be
    /// kept too). Returns the old-to-new id map.
    pub fn restrict(&self, keep: &[bool]) -> (InstanceTemplate, Vec<Option<SlotId>>) {
        let mut map = vec![None; self.slots.len()];
        let mut slots = Vec::new();
        for (i, s) in self.slots.iter().enumerate() {
            if keep[i] {
                map[i] = Some(SlotId(slots.len()));
                slots.push(s.clone());
            }
        }
        for s in &mut slots {
            s.parent = s.parent.and_then(|p| map[p.0]);
            s.children = s.children.iter().filter_map(|c| map[c.0]).collect();
        }
        let mut by_activity = vec![Vec::new(); self.model.len()];
        let mut by_path = HashMap::with_capacity(slots.len());
        for (i, s) in slots.iter().enumerate() {
            by_activity[s.activity.0].push(SlotId(i));
            by_path.insert(s.path.clone(), SlotId(i));
        }
        let t = InstanceTemplate {
            model: self.model.clone(),
            bindings: self.bindings.clone(),
            slots,
            by_path,
            by_activity,
        };
        (t, map)
    }

    pub fn depth(&self, id: SlotId) -> usize {
        let mut d = 0;
        let mut cur = id;
        while let Some(p) = self.slots[cur.0].parent {
            d += 1;
            cur = p;
        }
        d
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bindings_parse_and_print() {
        let b: Bindings = "E=2, V=4".parse().unwrap();
        assert_eq!(b.get("E"), Some(2));
        assert_eq!(b.to_string(), "E=2,V=4");
        assert!("E".parse::<Bindings>().is_err());
        assert_eq!("".parse::<Bindings>().unwrap(), Bindings::new());
    }
}

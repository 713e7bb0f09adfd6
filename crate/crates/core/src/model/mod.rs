//! Activity models: types, relations, loading and instance templates.

mod document;
mod template;
mod types;
mod wellformed;

use thiserror::Error;

pub use document::{
    load_model, load_model_files, ActivityDecl, ModelDocument, ModelLoader, RelationDecl,
};
pub use template::{
    expand_instance_template, BindError, Bindings, InstanceTemplate, Slot, SlotId, TemplateError,
};
pub use types::{
    ActivityId, ActivityKind, ActivityModel, ActivityType, Relation, RelationEdge, SyncSemantic,
};
pub use wellformed::{validate_well_formedness, Violation, ViolationCode};



#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ModelError {
    #[error("model is empty")]
    Empty,
    #[error("activity `{0}` is declared twice")]
    DuplicateName(String),
    #[error("unresolved reference to `{0}`")]
    UnresolvedReference(String),
    #[error("activity nesting is not a tree: {0}")]
    NotATree(String),
    #[error("model has several roots: {}", .0.join(", "))]
    MultipleRoots(Vec<String>),
    #[error("parse error{}: {message}", origin.as_ref().map(|o| format!(" in {o}")).unwrap_or_default())]
    Parse {
        origin: Option<String>,
        message: String,
    },
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("conflicting kinds for aliased activity `{name}`: {first:?} vs {second:?}")]
    ConflictingKind {
        name: String,
        first: ActivityKind,
        second: ActivityKind,
    },
    #[error("conflicting definition: {0}")]
    ConflictingDefinition(String),
    #[error("schema violation: {0}")]
    Schema(String),
    #[error("invalid relation: {0}")]
    InvalidRelation(String),
}

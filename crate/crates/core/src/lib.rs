//! Activity-model driven performance analysis.
//!
//! A system's activities are declared as a typed hierarchy (sequential,
//! forked and alternating composition over atomic steps) together with the
//! temporal aspects its sensors measure. From that model the crate
//!
//! * infers which begin/duration/end aspects are observable ([`observability`]),
//! * correlates distributed observation records into per-transaction bundles
//!   ([`trace`]),
//! * derives every unmeasured timestamp and duration with full provenance
//!   ([`derivation`]),
//! * checks measurements against the model and against each other
//!   ([`validation`]),
//! * and localizes latency anomalies by walking down the hierarchy
//!   ([`drilldown`]).
//!
//! [`sim`] generates ground-truth timelines and observation records from any
//! model and is the oracle the rest of the crate is tested against.

pub mod bundled;
pub mod derivation;
pub mod drilldown;
pub mod model;
pub mod observability;
pub mod sim;
mod stats;
pub mod time;
pub mod trace;
pub mod validation;

pub use derivation::{Provenance, Timeline, ValuedDerivation};
pub use model::{ActivityId, ActivityKind, ActivityModel, Bindings, InstanceTemplate, SlotId};
pub use observability::{DerivationGraph, ObservabilityStatus, RuleCatalog, RuleId};
pub use time::{Aspect, Micros};
pub use trace::{ObservationRecord, TraceBundle};

/// Version tag written into every JSON artifact.
pub const SCHEMA_VERSION: &str = "1";

/// Default equality tolerance for validation, in microseconds.
pub const DEFAULT_EPSILON_US: Micros = 1000;

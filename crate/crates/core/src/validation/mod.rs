//! Consistency checks of derived timelines against the model and against
//! themselves: identity, Allen edges, multi-path agreement, causality and
//! clock drift.

mod drift;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::derivation::{Timeline, ValuedDerivation};
use crate::model::{InstanceTemplate, Relation, SlotId};
use crate::time::{Aspect, Micros};

pub use drift::{drift_findings, estimate_drift, DriftPoint, DriftSeries, DriftError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FindingKind {
    IdentityViolation,
    RelationViolation,
    MultiPathMismatch,
    NegativeDuration,
    CausalityViolation,
    ClockDriftEstimate,
    ZeroDurationWarning,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Warning,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    pub kind: FindingKind,
    pub trace_id: String,
    pub slot: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aspect: Option<Aspect>,
    /// Signed discrepancy.
    pub magnitude_us: Micros,
    pub severity: Severity,
    pub detail: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sources: Vec<String>,
    /// The trace contains records assigned by collision recovery.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub repaired: bool,
}

/// Equality tolerance plus the factor separating negligible discrepancies
/// (warnings) from ones worth investigating (errors).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tolerance {
    pub epsilon_us: Micros,
    pub error_factor: Micros,
}

impl Tolerance {
    pub fn new(epsilon_us: Micros) -> Self {
        Tolerance {
            epsilon_us,
            error_factor: 10,
        }
    }

    pub fn severity(&self, magnitude: Micros) -> Severity {
        if magnitude.abs() <= self.epsilon_us.saturating_mul(self.error_factor) {
            Severity::Warning
        } else {
            Severity::Error
        }
    }
}

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance::new(crate::DEFAULT_EPSILON_US)
    }
}

/// Magnitudes of one (activity, aspect, derivation pair) over all traces
/// where both derivations resolved.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairDistribution {
    pub activity: String,
    pub aspect: Option<Aspect>,
    pub path_a: String,
    pub path_b: String,
    /// `b − a` per trace.
    pub magnitudes: Vec<Micros>,
    /// Traces where `|b − a| > ε`.
    pub mismatched: usize,
}

impl PairDistribution {
    pub fn count(&self) -> usize {
        self.magnitudes.len()
    }

    pub fn share(&self, traces: usize) -> f64 {
        if traces == 0 {
            0.0
        } else {
            self.mismatched as f64 / traces as f64
        }
    }

    /// `(bucket start, count)` with buckets of `bucket_us`.
    pub fn histogram(&self, bucket_us: Micros) -> Vec<(Micros, usize)> {
        let mut h: BTreeMap<Micros, usize> = BTreeMap::new();
        for &m in &self.magnitudes {
            *h.entry(m.div_euclid(bucket_us.max(1)) * bucket_us.max(1)).or_default() += 1;
        }
        h.into_iter().collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MismatchDistribution {
    pub traces: usize,
    pub pairs: Vec<PairDistribution>,
}

impl MismatchDistribution {
    pub fn get(&self, activity: &str, aspect: Aspect, a: &str, b: &str) -> Option<&PairDistribution> {
        self.pairs
            .iter()
            .find(|p| p.activity == activity && p.aspect == Some(aspect) && p.path_a == a && p.path_b == b)
    }

    /// CSV rows `activity,aspect,path_a,path_b,bucket_us,count`.
    pub fn to_csv(&self, bucket_us: Micros) -> String {
        let mut out = String::from("activity,aspect,path_a,path_b,bucket_us,count\n");
        for p in &self.pairs {
            let aspect = p.aspect.map(|a| a.as_str()).unwrap_or("");
            for (bucket, n) in p.histogram(bucket_us) {
                out.push_str(&format!("{},{},{},{},{},{}\n", p.activity, aspect, p.path_a, p.path_b, bucket, n));
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckCounts {
    pub identity: usize,
    pub relation: usize,
    pub multipath: usize,
}

impl CheckCounts {
    pub fn total(&self) -> usize {
        self.identity + self.relation + self.multipath
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConformanceReport {
    pub findings: Vec<Finding>,
    pub distribution: MismatchDistribution,
    pub checks: CheckCounts,
}

/// The Allen edges checked per trace: `(relation, from slot, to slot)` for
/// meets, before, startedBy and finishedBy (each edge once, not its
/// inverse).
pub fn checked_edges(template: &InstanceTemplate) -> Vec<(Relation, SlotId, SlotId)> {
    let model = template.model();
    let mut out = Vec::new();
    for s in template.ids() {
        let a = template.slot(s).activity;
        for rel in [Relation::Meets, Relation::Before, Relation::StartedBySub, Relation::FinishedBySub] {
            for other in model.related(a, rel) {
                let targets: Vec<SlotId> = match rel {
                    Relation::Meets | Relation::Before => template.sibling_of_type(s, other).into_iter().collect(),
                    _ => template
                        .slot(s)
                        .children
                        .iter()
                        .copied()
                        .filter(|c| template.slot(*c).activity == other)
                        .collect(),
                };
                out.extend(targets.into_iter().map(|t| (rel, s, t)));
            }
        }
    }
    out
}

fn sources_of(ds: &[ValuedDerivation]) -> BTreeSet<String> {
    ds.iter().flat_map(|d| d.sources.iter().cloned()).collect()
}

/// Median value per derivation label of one slot-aspect.
fn by_label(ds: &[ValuedDerivation]) -> BTreeMap<String, Micros> {
    let mut groups: BTreeMap<String, Vec<Micros>> = BTreeMap::new();
    for d in ds {
        groups.entry(d.label()).or_default().push(d.value);
    }
    groups
        .into_iter()
        .map(|(k, v)| (k, crate::derivation::median(v)))
        .collect()
}

pub fn check_conformance(timelines: &[Timeline], tol: Tolerance) -> ConformanceReport {
    let eps = tol.epsilon_us;
    let mut report = ConformanceReport::default();
    let mut pairs: BTreeMap<(String, Aspect, String, String), PairDistribution> = BTreeMap::new();
    let mut edge_cache: Option<(*const InstanceTemplate, Vec<(Relation, SlotId, SlotId)>)> = None;

    for tl in timelines {
        report.distribution.traces += 1;
        let template = tl.template();
        let finding = |kind, slot: SlotId, aspect, magnitude: Micros, detail: String, sources: BTreeSet<String>| Finding {
            kind,
            trace_id: tl.trace_id.clone(),
            slot: template.slot(slot).path.to_string(),
            aspect,
            magnitude_us: magnitude,
            severity: tol.severity(magnitude),
            detail,
            sources: sources.into_iter().collect(),
            repaired: tl.repaired,
        };

        for s in template.ids() {
            let (b, d, e) = (
                tl.resolved(s, Aspect::Begin),
                tl.resolved(s, Aspect::Duration),
                tl.resolved(s, Aspect::End),
            );
            if let (Some(b), Some(d), Some(e)) = (b, d, e) {
                report.checks.identity += 1;
                let m = b + d - e;
                if m.abs() > eps {
                    let mut src = sources_of(tl.derivations(s, Aspect::Begin));
                    src.extend(sources_of(tl.derivations(s, Aspect::Duration)));
                    src.extend(sources_of(tl.derivations(s, Aspect::End)));
                    report.findings.push(finding(
                        FindingKind::IdentityViolation,
                        s,
                        None,
                        m,
                        format!("begin + duration - end = {m} us"),
                        src,
                    ));
                }
            }
        }

        let key = std::sync::Arc::as_ptr(template);
        if edge_cache.as_ref().map(|c| c.0) != Some(key) {
            edge_cache = Some((key, checked_edges(template)));
        }
        let edges = &edge_cache.as_ref().expect("just filled").1;
        for &(rel, from, to) in edges {
            let (x, y, xa, ya) = match rel {
                Relation::Meets | Relation::Before => (from, to, Aspect::End, Aspect::Begin),
                Relation::StartedBySub => (from, to, Aspect::Begin, Aspect::Begin),
                _ => (from, to, Aspect::End, Aspect::End),
            };
            let (Some(vx), Some(vy)) = (tl.resolved(x, xa), tl.resolved(y, ya)) else {
                continue;
            };
            report.checks.relation += 1;
            // for meets/before: successor begin minus predecessor end;
            // for startedBy/finishedBy: child minus parent
            let m = vy - vx;
            let violated = match rel {
                Relation::Before => m < -eps,
                _ => m.abs() > eps,
            };
            if violated {
                let mut src = sources_of(tl.derivations(x, xa));
                src.extend(sources_of(tl.derivations(y, ya)));
                report.findings.push(finding(
                    FindingKind::RelationViolation,
                    to,
                    Some(ya),
                    m,
                    format!("{rel} from `{}` off by {m} us", template.slot(from).path),
                    src,
                ));
            }
        }

        for s in template.ids() {
            for a in Aspect::ALL {
                let ds = tl.derivations(s, a);
                if ds.len() < 2 {
                    continue;
                }
                report.checks.multipath += 1;
                let labels = by_label(ds);
                let lo = ds.iter().map(|d| d.value).min().expect("non-empty");
                let hi = ds.iter().map(|d| d.value).max().expect("non-empty");
                if hi - lo > eps {
                    let lo_d = ds.iter().find(|d| d.value == lo).expect("present");
                    let hi_d = ds.iter().find(|d| d.value == hi).expect("present");
                    let src: BTreeSet<String> = lo_d.sources.iter().chain(&hi_d.sources).cloned().collect();
                    report.findings.push(finding(
                        FindingKind::MultiPathMismatch,
                        s,
                        Some(a),
                        hi - lo,
                        format!("{} = {lo} vs {} = {hi}", lo_d.label(), hi_d.label()),
                        src,
                    ));
                }
                let labels: Vec<(String, Micros)> = labels.into_iter().collect();
                let type_path = template.slot(s).type_path.to_string();
                for i in 0..labels.len() {
                    for j in i + 1..labels.len() {
                        let (la, va) = &labels[i];
                        let (lb, vb) = &labels[j];
                        let entry = pairs
                            .entry((type_path.clone(), a, la.clone(), lb.clone()))
                            .or_insert_with(|| PairDistribution {
                                activity: type_path.clone(),
                                aspect: Some(a),
                                path_a: la.clone(),
                                path_b: lb.clone(),
                                ..Default::default()
                            });
                        let m = vb - va;
                        entry.magnitudes.push(m);
                        if m.abs() > eps {
                            entry.mismatched += 1;
                        }
                    }
                }
            }
        }
    }
    report.distribution.pairs = pairs.into_values().collect();
    report
}

/// Negative durations, zero durations and successor-before-predecessor
/// orderings.
pub fn check_causality(timelines: &[Timeline], tol: Tolerance) -> Vec<Finding> {
    let eps = tol.epsilon_us;
    let mut out = Vec::new();
    for tl in timelines {
        let template = tl.template();
        for s in template.ids() {
            let ds = tl.derivations(s, Aspect::Duration);
            let Some(d) = tl.resolved(s, Aspect::Duration) else {
                continue;
            };
            let (kind, severity, detail) = if d < 0 {
                (FindingKind::NegativeDuration, Severity::Error, format!("duration {d} us"))
            } else if d == 0 || ds.iter().any(|x| x.is_measured() && x.value == 0) {
                (FindingKind::ZeroDurationWarning, Severity::Warning, "zero-length duration".to_string())
            } else {
                continue;
            };
            let src: BTreeSet<String> = if d < 0 {
                ds.iter().filter(|x| x.value < 0).flat_map(|x| x.sources.iter().cloned()).collect()
            } else {
                sources_of(ds)
            };
            out.push(Finding {
                kind,
                trace_id: tl.trace_id.clone(),
                slot: template.slot(s).path.to_string(),
                aspect: Some(Aspect::Duration),
                magnitude_us: d,
                severity,
                detail,
                sources: src.into_iter().collect(),
                repaired: tl.repaired,
            });
        }
        for (rel, from, to) in checked_edges(template) {
            if !matches!(rel, Relation::Meets | Relation::Before) {
                continue;
            }
            let (Some(e), Some(b)) = (tl.resolved(from, Aspect::End), tl.resolved(to, Aspect::Begin)) else {
                continue;
            };
            if b < e - eps {
                let mut src = sources_of(tl.derivations(from, Aspect::End));
                src.extend(sources_of(tl.derivations(to, Aspect::Begin)));
                out.push(Finding {
                    kind: FindingKind::CausalityViolation,
                    trace_id: tl.trace_id.clone(),
                    slot: template.slot(to).path.to_string(),
                    aspect: Some(Aspect::Begin),
                    magnitude_us: b - e,
                    severity: Severity::Error,
                    detail: format!("begins {} us before `{}` ends", e - b, template.slot(from).path),
                    sources: src.into_iter().collect(),
                    repaired: tl.repaired,
                });
            }
        }
    }
    out
}

pub fn error_count(findings: &[Finding]) -> usize {
    findings.iter().filter(|f| f.severity == Severity::Error).count()
}

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Finding, FindingKind, Severity};
use crate::derivation::{Provenance, Timeline};
use crate::model::SlotId;
use crate::observability::rules;
use crate::time::{Aspect, Micros};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DriftError {
    #[error("window of {window_us} us exceeds the {span_us} us spanned by the data")]
    WindowTooLarge { window_us: Micros, span_us: Micros },
    #[error("window must be positive")]
    EmptyWindow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftPoint {
    pub window_start_us: Micros,
    pub mean_us: f64,
    pub samples: usize,
}

/// Windowed means of durations whose end and begin came from two different
/// sources. Skew between the sources shows up as the series moving while
/// the underlying activity stays put.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftSeries {
    pub activity: String,
    pub end_source: String,
    pub begin_source: String,
    pub points: Vec<DriftPoint>,
}

pub fn estimate_drift(timelines: &[Timeline], window_us: Micros) -> Result<Vec<DriftSeries>, DriftError> {
    if window_us <= 0 {
        return Err(DriftError::EmptyWindow);
    }
    let mut samples: BTreeMap<(String, String, String), Vec<(Micros, Micros)>> = BTreeMap::new();
    let (mut lo, mut hi) = (Micros::MAX, Micros::MIN);
    for tl in timelines {
        let template = tl.template();
        let Some(t) = tl.resolved(template.root(), Aspect::Begin) else {
            continue;
        };
        lo = lo.min(t);
        hi = hi.max(t);
        for s in template.ids() {
            for d in tl.derivations(s, Aspect::Duration) {
                let Provenance::Rule { rule, inputs } = &d.provenance else {
                    continue;
                };
                if rule.as_str() != rules::R2.as_str() || inputs.len() != 2 {
                    continue;
                }
                let (e, b) = (&inputs[0].sources, &inputs[1].sources);
                if e.len() == 1 && b.len() == 1 && e[0] != b[0] {
                    samples
                        .entry((type_path(tl, s), e[0].clone(), b[0].clone()))
                        .or_default()
                        .push((t, d.value));
                }
            }
        }
    }
    if lo > hi {
        return Ok(Vec::new());
    }
    if window_us > hi - lo {
        return Err(DriftError::WindowTooLarge {
            window_us,
            span_us: hi - lo,
        });
    }
    Ok(samples
        .into_iter()
        .map(|((activity, end_source, begin_source), pts)| {
            let mut windows: BTreeMap<Micros, (i128, usize)> = BTreeMap::new();
            for (t, v) in pts {
                let w = lo + (t - lo) / window_us * window_us;
                let acc = windows.entry(w).or_default();
                acc.0 += v as i128;
                acc.1 += 1;
            }
            DriftSeries {
                activity,
                end_source,
                begin_source,
                points: windows
                    .into_iter()
                    .map(|(w, (sum, n))| DriftPoint {
                        window_start_us: w,
                        mean_us: sum as f64 / n as f64,
                        samples: n,
                    })
                    .collect(),
            }
        })
        .collect())
}

fn type_path(tl: &Timeline, s: SlotId) -> String {
    tl.template().slot(s).type_path.to_string()
}

/// One informational finding per series window, relative to the series'
/// overall mean.
pub fn drift_findings(series: &[DriftSeries]) -> Vec<Finding> {
    let mut out = Vec::new();
    for s in series {
        let n: usize = s.points.iter().map(|p| p.samples).sum();
        if n == 0 {
            continue;
        }
        let overall = s.points.iter().map(|p| p.mean_us * p.samples as f64).sum::<f64>() / n as f64;
        for p in &s.points {
            out.push(Finding {
                kind: FindingKind::ClockDriftEstimate,
                trace_id: String::new(),
                slot: s.activity.clone(),
                aspect: Some(Aspect::Duration),
                magnitude_us: (p.mean_us - overall).round() as Micros,
                severity: Severity::Warning,
                detail: format!(
                    "window at {} us: mean {:.1} us over {} traces",
                    p.window_start_us, p.mean_us, p.samples
                ),
                sources: vec![s.end_source.clone(), s.begin_source.clone()],
                repaired: false,
            });
        }
    }
    out
}

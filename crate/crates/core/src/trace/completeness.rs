use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{ObservationRecord, TraceBundle};
use crate::model::InstanceTemplate;
use crate::time::Aspect;

/// A measurement the model says should exist in every trace.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Expected {
    pub slot: String,
    pub aspect: Aspect,
    pub source: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Surplus {
    pub record: ObservationRecord,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceCompleteness {
    pub missing: Vec<Expected>,
    pub surplus: Vec<Surplus>,
}

impl TraceCompleteness {
    pub fn is_empty(&self) -> bool {
        self.missing.is_empty() && self.surplus.is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceStats {
    /// Expected records per trace from this source.
    pub expected_per_trace: usize,
    pub missing_records: usize,
    pub traces_missing_any: usize,
    /// Traces with no record at all from this source.
    pub traces_missing_all: usize,
    pub surplus_records: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletenessReport {
    pub traces_checked: usize,
    /// Only traces with a finding are listed.
    pub per_trace: BTreeMap<String, TraceCompleteness>,
    pub by_source: BTreeMap<String, SourceStats>,
}

impl CompletenessReport {
    pub fn is_empty(&self) -> bool {
        self.per_trace.is_empty()
    }

    pub fn traces_missing_all_from(&self, source: &str) -> usize {
        self.by_source.get(source).map_or(0, |s| s.traces_missing_all)
    }
}

/// The (slot, aspect, source) triples every complete trace carries.
pub fn expected_set(template: &InstanceTemplate) -> BTreeSet<Expected> {
    let model = template.model();
    template
        .slots()
        .iter()
        .flat_map(|s| {
            model.ty(s.activity).measured.iter().map(move |&a| Expected {
                slot: s.path.to_string(),
                aspect: a,
                source: s.source.clone(),
            })
        })
        .collect()
}

/// Compares each bundle with the expected measurement set: anything
/// expected but absent is missing, anything else (unbindable records,
/// unexpected sources, duplicates) is surplus.
pub fn completeness_check<'a>(
    bundles: impl IntoIterator<Item = &'a TraceBundle>,
    template: &InstanceTemplate,
) -> CompletenessReport {
    let expected = expected_set(template);
    let mut report = CompletenessReport::default();
    for e in &expected {
        report.by_source.entry(e.source.clone()).or_default().expected_per_trace += 1;
    }

    for bundle in bundles {
        report.traces_checked += 1;
        let mut seen: BTreeSet<Expected> = BTreeSet::new();
        let mut tc = TraceCompleteness::default();
        for r in &bundle.records {
            let slot = match template.bind(&r.activity, r.replica.as_deref()) {
                Ok(s) => s,
                Err(e) => {
                    tc.surplus.push(Surplus {
                        record: r.clone(),
                        reason: e.to_string(),
                    });
                    continue;
                }
            };
            let key = Expected {
                slot: template.slot(slot).path.to_string(),
                aspect: r.aspect,
                source: r.source.clone(),
            };
            let reason = if !expected.contains(&key) {
                "not an expected measurement"
            } else if !seen.insert(key) {
                "duplicate record"
            } else {
                continue;
            };
            tc.surplus.push(Surplus {
                record: r.clone(),
                reason: reason.into(),
            });
        }
        tc.missing = expected.difference(&seen).cloned().collect();

        let mut missing_by_source: BTreeMap<&str, usize> = BTreeMap::new();
        for m in &tc.missing {
            *missing_by_source.entry(m.source.as_str()).or_default() += 1;
        }
        for (src, n) in missing_by_source {
            let st = report.by_source.get_mut(src).expect("expected source");
            st.missing_records += n;
            st.traces_missing_any += 1;
            if n == st.expected_per_trace {
                st.traces_missing_all += 1;
            }
        }
        for s in &tc.surplus {
            report.by_source.entry(s.record.source.clone()).or_default().surplus_records += 1;
        }
        if !tc.is_empty() {
            report.per_trace.insert(bundle.trace_id.clone(), tc);
        }
    }
    report
}

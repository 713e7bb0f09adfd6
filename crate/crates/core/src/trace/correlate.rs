use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{ObservationRecord, TidKind, TraceBundle};
use crate::time::Micros;

pub const DEFAULT_PREFIX_LEN: usize = 8;
pub const DEFAULT_RECOVERY_WINDOW_US: Micros = 60_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorrelationPolicy {
    /// Shortened ids longer than this are cut to it before matching.
    pub prefix_len: usize,
}

impl Default for CorrelationPolicy {
    fn default() -> Self {
        CorrelationPolicy {
            prefix_len: DEFAULT_PREFIX_LEN,
        }
    }
}

/// Short-id records that matched several full ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Collision {
    pub prefix: String,
    pub candidates: Vec<String>,
    pub records: Vec<ObservationRecord>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CollisionReport {
    pub collisions: Vec<Collision>,
}

impl CollisionReport {
    pub fn is_empty(&self) -> bool {
        self.collisions.is_empty()
    }

    pub fn quarantined(&self) -> usize {
        self.collisions.iter().map(|c| c.records.len()).sum()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Correlation {
    pub bundles: BTreeMap<String, TraceBundle>,
    pub collisions: CollisionReport,
}

impl Correlation {
    pub fn record_count(&self) -> usize {
        self.bundles.values().map(|b| b.records.len()).sum::<usize>() + self.collisions.quarantined()
    }
}

/// Groups records by transaction id. Shortened ids join the unique bundle
/// whose full id starts with them; when several full ids share the prefix
/// the record is quarantined instead of guessed.
pub fn correlate(records: Vec<ObservationRecord>, policy: CorrelationPolicy) -> Correlation {
    let mut bundles: BTreeMap<String, TraceBundle> = BTreeMap::new();
    let mut short = Vec::new();
    for r in records {
        match r.tid_kind {
            TidKind::Full => bundles
                .entry(r.tid.clone())
                .or_insert_with(|| TraceBundle::new(r.tid.clone()))
                .records
                .push(r),
            TidKind::Short => short.push(r),
        }
    }
    let full_ids: Vec<String> = bundles.keys().cloned().collect();

    let mut quarantine: BTreeMap<String, Collision> = BTreeMap::new();
    let mut unanchored: BTreeMap<String, TraceBundle> = BTreeMap::new();
    for mut r in short {
        if let Some((cut, _)) = r.tid.char_indices().nth(policy.prefix_len.max(1)) {
            r.tid.truncate(cut);
        }
        // ids are sorted, so prefix matches are one contiguous range
        let start = full_ids.partition_point(|id| id.as_str() < r.tid.as_str());
        let candidates: Vec<&String> = full_ids[start..]
            .iter()
            .take_while(|id| id.starts_with(&r.tid))
            .collect();
        match candidates.as_slice() {
            [] => unanchored
                .entry(r.tid.clone())
                .or_insert_with(|| {
                    let mut b = TraceBundle::new(r.tid.clone());
                    b.unanchored = true;
                    b
                })
                .records
                .push(r),
            [one] => bundles.get_mut(*one).expect("candidate exists").records.push(r),
            many => {
                let ids: Vec<String> = many.iter().map(|s| s.to_string()).collect();
                quarantine
                    .entry(r.tid.clone())
                    .or_insert_with(|| Collision {
                        prefix: r.tid.clone(),
                        candidates: ids,
                        records: Vec::new(),
                    })
                    .records
                    .push(r);
            }
        }
    }
    for c in quarantine.values() {
        for id in &c.candidates {
            let others: Vec<&str> = c.candidates.iter().filter(|o| *o != id).map(String::as_str).collect();
            bundles.get_mut(id).expect("candidate exists").ambiguity = Some(format!(
                "short id `{}` also matches {}",
                c.prefix,
                others.join(", ")
            ));
        }
    }
    for (k, b) in unanchored {
        bundles.entry(k).or_insert(b);
    }
    Correlation {
        bundles,
        collisions: CollisionReport {
            collisions: quarantine.into_values().collect(),
        },
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecoveryOutcome {
    /// (record, bundle it was assigned to)
    pub assigned: Vec<(ObservationRecord, String)>,
    pub still_quarantined: usize,
}

/// Assigns a quarantined record when exactly one candidate bundle has a
/// record captured within `window_us` of it.
pub fn recover_collisions(corr: &mut Correlation, window_us: Micros) -> RecoveryOutcome {
    let mut out = RecoveryOutcome::default();
    let collisions = std::mem::take(&mut corr.collisions.collisions);
    let mut left = Vec::new();
    for mut c in collisions {
        let mut keep = Vec::new();
        for r in c.records.drain(..) {
            let near: Vec<&String> = c
                .candidates
                .iter()
                .filter(|id| {
                    corr.bundles[*id]
                        .records
                        .iter()
                        .any(|o| (o.captured_us - r.captured_us).abs() <= window_us)
                })
                .collect();
            match near.as_slice() {
                [one] => {
                    let id = (*one).clone();
                    let b = corr.bundles.get_mut(&id).expect("candidate exists");
                    b.records.push(r.clone());
                    b.recovered += 1;
                    out.assigned.push((r, id));
                }
                _ => keep.push(r),
            }
        }
        if !keep.is_empty() {
            out.still_quarantined += keep.len();
            c.records = keep;
            left.push(c);
        }
    }
    corr.collisions.collisions = left;
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::time::Aspect;

    fn rec(tid: &str, kind: TidKind, at: Micros) -> ObservationRecord {
        ObservationRecord {
            tid: tid.into(),
            tid_kind: kind,
            activity: "A".into(),
            replica: None,
            aspect: Aspect::End,
            value_us: at,
            source: "s".into(),
            captured_us: at,
        }
    }

    #[test]
    fn full_ids_only() {
        let c = correlate(
            vec![rec("aaaa", TidKind::Full, 1), rec("bbbb", TidKind::Full, 2), rec("aaaa", TidKind::Full, 3)],
            CorrelationPolicy::default(),
        );
        assert_eq!(c.bundles.len(), 2);
        assert!(c.collisions.is_empty());
    }

    #[test]
    fn shared_prefix_is_quarantined_then_recovered() {
        let ten_min = 600_000_000;
        let recs = vec![
            rec("abcdef01XXXX", TidKind::Full, 0),
            rec("abcdef01YYYY", TidKind::Full, ten_min),
            rec("abcdef01", TidKind::Short, ten_min + 5),
        ];
        let mut c = correlate(recs, CorrelationPolicy::default());
        assert_eq!(c.collisions.collisions.len(), 1);
        assert_eq!(c.collisions.collisions[0].candidates.len(), 2);
        let out = recover_collisions(&mut c, DEFAULT_RECOVERY_WINDOW_US);
        assert_eq!(out.assigned.len(), 1);
        assert_eq!(out.assigned[0].1, "abcdef01YYYY");
        assert_eq!(c.bundles["abcdef01YYYY"].recovered, 1);
        assert!(c.collisions.is_empty());
    }

    #[test]
    fn unmatched_short_id_is_unanchored() {
        let c = correlate(vec![rec("zzzz", TidKind::Short, 0)], CorrelationPolicy::default());
        assert!(c.bundles["zzzz"].unanchored);
    }
}

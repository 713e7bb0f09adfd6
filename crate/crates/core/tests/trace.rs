mod common;

use std::collections::BTreeSet;

use proptest::prelude::*;
use tempont::bundled;
use tempont::sim::{simulate, Law, Omission, ShortIds, SimConfig};
use tempont::trace::{
    completeness_check, correlate, expected_set, ingest, recover_collisions, write_csv, write_jsonl, CorrelationPolicy,
    Format, TidKind, TraceError,
};
use tempont::{Aspect, ObservationRecord};

use common::bindings;

fn rec(tid: &str, kind: TidKind, activity: &str, captured: i64) -> ObservationRecord {
    ObservationRecord {
        tid: tid.into(),
        tid_kind: kind,
        activity: activity.into(),
        replica: None,
        aspect: Aspect::End,
        value_us: captured,
        source: "orderer".into(),
        captured_us: captured,
    }
}

#[test]
fn three_jsonl_lines_give_three_records() {
    let text = r#"{"tid":"a1","tid_kind":"full","activity":"X","replica":null,"aspect":"begin","value_us":5,"source":"client","captured_us":5}
{"tid":"a1","tid_kind":"full","activity":"X","replica":null,"aspect":"end","value_us":9,"source":"client","captured_us":9}
{"tid":"a2","tid_kind":"full","activity":"X","replica":"peer0","aspect":"duration","value_us":4,"source":"peer0","captured_us":9}
"#;
    let got = ingest(text.as_bytes(), Format::Jsonl).unwrap();
    assert_eq!(got.records.len(), 3);
    assert!(got.rejects.is_empty());
    assert_eq!(got.records[2].replica.as_deref(), Some("peer0"));
}

#[test]
fn malformed_and_negative_lines_are_rejected_with_line_numbers() {
    let text = "{\"tid\":\"a\",\"tid_kind\":\"full\",\"activity\":\"X\",\"replica\":null,\"aspect\":\"duration\",\"value_us\":-3,\"source\":\"s\",\"captured_us\":1}\nnot json\n";
    let got = ingest(text.as_bytes(), Format::Jsonl).unwrap();
    assert!(got.records.is_empty());
    assert_eq!(got.rejects.len(), 2);
    assert_eq!((got.rejects[0].line, got.rejects[0].reason.as_str()), (1, "negative duration"));
    assert_eq!(got.rejects[1].line, 2);
}

#[test]
fn unknown_format_tag() {
    assert!(matches!("xml".parse::<Format>(), Err(TraceError::UnknownFormat(_))));
}

#[test]
fn simulated_file_of_1000_traces_has_18000_records() {
    let cfg = SimConfig {
        traces: 1000,
        ..SimConfig::default()
    };
    let out = simulate(&bundled::hlf(), &bindings(1, 1), &cfg).unwrap();
    let mut jsonl = Vec::new();
    write_jsonl(&mut jsonl, &out.records).unwrap();
    assert_eq!(ingest(jsonl.as_slice(), Format::Jsonl).unwrap().records.len(), 18_000);

    let mut csv = Vec::new();
    write_csv(&mut csv, &out.records).unwrap();
    let back = ingest(csv.as_slice(), Format::Csv).unwrap();
    assert_eq!(back.records, out.records);
}

#[test]
fn shared_prefix_is_a_two_candidate_collision() {
    let records = vec![
        rec("abcdef01XXXXXXXX", TidKind::Full, "A", 0),
        rec("abcdef01YYYYYYYY", TidKind::Full, "A", 600_000_000),
        rec("abcdef01", TidKind::Short, "B", 5),
    ];
    let corr = correlate(records, CorrelationPolicy::default());
    let c = &corr.collisions.collisions;
    assert_eq!(c.len(), 1);
    assert_eq!(c[0].candidates, vec!["abcdef01XXXXXXXX".to_string(), "abcdef01YYYYYYYY".to_string()]);
    assert!(corr.bundles.values().all(|b| b.ambiguity.is_some()));
}

#[test]
fn proximity_pass_recovers_and_flags() {
    let records = vec![
        rec("abcdef01XXXXXXXX", TidKind::Full, "A", 0),
        rec("abcdef01YYYYYYYY", TidKind::Full, "A", 600_000_000),
        rec("abcdef01", TidKind::Short, "B", 600_000_100),
    ];
    let mut corr = correlate(records, CorrelationPolicy::default());
    let outcome = recover_collisions(&mut corr, 60_000_000);
    assert_eq!(outcome.assigned.len(), 1);
    assert_eq!(outcome.assigned[0].1, "abcdef01YYYYYYYY");
    assert_eq!(corr.bundles["abcdef01YYYYYYYY"].recovered, 1);
    assert!(corr.collisions.is_empty());
}

#[test]
fn full_ids_only_have_no_collisions() {
    let records = vec![rec("a", TidKind::Full, "A", 0), rec("b", TidKind::Full, "A", 1), rec("a", TidKind::Full, "B", 2)];
    let corr = correlate(records, CorrelationPolicy::default());
    assert_eq!(corr.bundles.keys().cloned().collect::<Vec<_>>(), ["a", "b"]);
    assert!(corr.collisions.is_empty());
}

#[test]
fn complete_data_gives_an_empty_report() {
    let out = simulate(&bundled::hlf(), &bindings(2, 2), &SimConfig::default()).unwrap();
    let corr = correlate(out.records, CorrelationPolicy::default());
    let report = completeness_check(corr.bundles.values(), &out.truth.template);
    assert!(report.is_empty());
    assert_eq!(report.traces_checked, 100);
}

#[test]
fn omitted_client_traces_miss_all_client_records() {
    let lost: Vec<usize> = vec![3, 7, 11, 19, 23, 42, 55, 61, 80, 97];
    let cfg = SimConfig {
        omissions: vec![Omission {
            source: "client".into(),
            probability: 0.0,
            traces: lost.clone(),
        }],
        ..SimConfig::default()
    };
    let out = simulate(&bundled::hlf(), &bindings(1, 1), &cfg).unwrap();
    let corr = correlate(out.records, CorrelationPolicy::default());
    let report = completeness_check(corr.bundles.values(), &out.truth.template);
    assert_eq!(report.traces_missing_all_from("client"), 10);
    let flagged: BTreeSet<&str> = report.per_trace.keys().map(String::as_str).collect();
    let expect: BTreeSet<&str> = lost.iter().map(|&i| out.truth.traces[i].trace_id.as_str()).collect();
    assert_eq!(flagged, expect);
    assert_eq!(report.traces_missing_all_from("peer0"), 0);
}

#[test]
fn chaincode_call_from_a_non_executing_peer_is_surplus() {
    let out = simulate(&bundled::hlf(), &bindings(1, 1), &SimConfig { traces: 3, ..SimConfig::default() }).unwrap();
    let mut records = out.records.clone();
    let mut stray = records.iter().find(|r| r.activity == "ChaincodeCall").unwrap().clone();
    stray.replica = Some("peer1".into());
    stray.source = "peer1".into();
    records.push(stray.clone());
    let corr = correlate(records, CorrelationPolicy::default());
    let report = completeness_check(corr.bundles.values(), &out.truth.template);
    let tc = &report.per_trace[&stray.tid];
    assert!(tc.missing.is_empty());
    assert_eq!(tc.surplus.len(), 1);
    assert_eq!(tc.surplus[0].record, stray);
}

fn short_id_config(seed: u64, collide: bool) -> SimConfig {
    SimConfig {
        traces: 20,
        seed,
        id_length: 16,
        inter_arrival: Law::constant(1_000_000.0),
        short_ids: Some(ShortIds {
            length: 8,
            activities: vec!["BlockCreation".into(), "CheckPayload".into()],
        }),
        prefix_collisions: if collide { vec![(0, 5), (2, 9)] } else { Vec::new() },
        ..SimConfig::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn every_record_lands_in_exactly_one_place(seed in 0u64..1000, collide: bool, garbage in 0usize..4) {
        let out = simulate(&bundled::hlf(), &bindings(1, 1), &short_id_config(seed, collide)).unwrap();
        let mut text = Vec::new();
        write_jsonl(&mut text, &out.records).unwrap();
        for _ in 0..garbage {
            text.extend_from_slice(b"{broken\n");
        }
        let ingested = ingest(text.as_slice(), Format::Jsonl).unwrap();
        prop_assert_eq!(ingested.rejects.len(), garbage);
        prop_assert_eq!(ingested.records.len(), out.records.len());
        let mut input = ingested.records.clone();
        let corr = correlate(ingested.records, CorrelationPolicy::default());
        let mut placed: Vec<_> = corr.bundles.values().flat_map(|b| b.records.iter().cloned()).collect();
        placed.extend(corr.collisions.collisions.iter().flat_map(|c| c.records.iter().cloned()));
        let key = |r: &tempont::ObservationRecord| serde_json::to_string(r).unwrap();
        input.sort_by_key(key);
        placed.sort_by_key(key);
        prop_assert_eq!(placed, input);
    }

    #[test]
    fn short_ids_only_join_bundles_with_that_prefix(seed in 0u64..1000, collide: bool) {
        let out = simulate(&bundled::hlf(), &bindings(1, 1), &short_id_config(seed, collide)).unwrap();
        let mut corr = correlate(out.records, CorrelationPolicy::default());
        recover_collisions(&mut corr, 60_000_000);
        for (id, b) in &corr.bundles {
            for r in &b.records {
                prop_assert!(id.starts_with(&r.tid));
            }
        }
    }

    #[test]
    fn missing_plus_observed_is_expected(seed in 0u64..1000, p in 0.0f64..0.5) {
        let cfg = SimConfig {
            traces: 20,
            seed,
            omissions: vec![
                Omission { source: "peer0".into(), probability: p, traces: Vec::new() },
                Omission { source: "orderer".into(), probability: p, traces: Vec::new() },
            ],
            ..SimConfig::default()
        };
        let out = simulate(&bundled::hlf(), &bindings(1, 2), &cfg).unwrap();
        let template = &out.truth.template;
        let expected = expected_set(template);
        let corr = correlate(out.records, CorrelationPolicy::default());
        let report = completeness_check(corr.bundles.values(), template);
        for (id, b) in &corr.bundles {
            let observed: BTreeSet<_> = b
                .records
                .iter()
                .map(|r| {
                    let s = template.bind(&r.activity, r.replica.as_deref()).unwrap();
                    tempont::trace::Expected {
                        slot: template.slot(s).path.to_string(),
                        aspect: r.aspect,
                        source: r.source.clone(),
                    }
                })
                .collect();
            let missing: BTreeSet<_> = report
                .per_trace
                .get(id)
                .map(|t| t.missing.iter().cloned().collect())
                .unwrap_or_default();
            prop_assert!(missing.is_disjoint(&observed));
            let union: BTreeSet<_> = missing.union(&observed).cloned().collect();
            prop_assert_eq!(&union, &expected);
        }
    }
}

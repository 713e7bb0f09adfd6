mod common;

use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tempont::bundled;
use tempont::model::{ActivityKind, Relation};
use tempont::observability::{instrumentation_gaps, rule_instances, rules, saturate, saturate_in_order, InferenceReport};
use tempont::{ActivityId, ActivityModel, Aspect, RuleCatalog};

type Node = (ActivityId, Aspect);

/// Class-level inference rules written out directly from the model
/// structure: `(target, inputs)` pairs.
fn oracle_rules(m: &ActivityModel) -> Vec<(Node, Vec<Node>)> {
    use Aspect::*;
    let mut out = Vec::new();
    for t in m.ids() {
        out.push(((t, Begin), vec![(t, Duration), (t, End)]));
        out.push(((t, Duration), vec![(t, Begin), (t, End)]));
        out.push(((t, End), vec![(t, Begin), (t, Duration)]));
        let kids = m.children(t);
        let kind = m.ty(t).kind;
        if kind == ActivityKind::Forked && !kids.is_empty() {
            out.push(((t, Begin), kids.iter().map(|&c| (c, Begin)).collect()));
            out.push(((t, End), kids.iter().map(|&c| (c, End)).collect()));
        }
        if kind == ActivityKind::Alternating && !kids.is_empty() {
            out.push(((t, Duration), kids.iter().map(|&c| (c, Duration)).collect()));
        }
        for p in m.related(t, Relation::StartsParent) {
            out.push(((t, Begin), vec![(p, Begin)]));
        }
        for c in m.related(t, Relation::StartedBySub) {
            out.push(((t, Begin), vec![(c, Begin)]));
        }
        for pred in m.related(t, Relation::MetBy) {
            out.push(((t, Begin), vec![(pred, End)]));
        }
        for succ in m.related(t, Relation::Meets) {
            out.push(((t, End), vec![(succ, Begin)]));
        }
        for p in m.related(t, Relation::FinishesParent) {
            out.push(((t, End), vec![(p, End)]));
        }
        for c in m.related(t, Relation::FinishedBySub) {
            out.push(((t, End), vec![(c, End)]));
        }
        if let Some(p) = m.parent(t) {
            match m.ty(p).kind {
                ActivityKind::Forked => out.push(((t, Begin), vec![(p, Begin)])),
                ActivityKind::Alternating => {
                    let mut inputs = vec![(p, Duration)];
                    inputs.extend(m.children(p).iter().filter(|&&s| s != t).map(|&s| (s, Duration)));
                    out.push(((t, Duration), inputs));
                }
                _ => {}
            }
        }
    }
    out
}

/// Applies rules in random order until nothing changes.
fn brute_force(m: &ActivityModel, seed: u64) -> BTreeSet<Node> {
    let mut known: BTreeSet<Node> = m
        .ids()
        .flat_map(|t| m.ty(t).measured.iter().map(move |&a| (t, a)))
        .collect();
    let mut rules = oracle_rules(m);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        rules.shuffle(&mut rng);
        let before = known.len();
        for (target, inputs) in &rules {
            if inputs.iter().all(|i| known.contains(i)) {
                known.insert(*target);
            }
        }
        if known.len() == before {
            return known;
        }
    }
}

#[test]
fn duration_and_end_give_begin_via_r1() {
    let m = common::build(&common::doc("one", common::leaf("A", &[Aspect::Duration, Aspect::End])));
    let (status, _) = saturate(&m);
    let a = m.root();
    assert!(status.is_observed(a, Aspect::Begin));
    assert!(status.inferred_by(a, Aspect::Begin).contains(&rules::R1));
}

#[test]
fn nothing_measured_gives_empty_graph() {
    let m = common::random_model(3, 8).with_measured(|_, _| Default::default());
    let (status, graph) = saturate(&m);
    assert!(status.observed().is_empty());
    assert!(graph.edges.is_empty());
    assert_eq!(instrumentation_gaps(&m, &status, &graph).len(), 3 * m.len());
}

#[test]
fn single_begin_is_one_input_short_for_duration_and_end() {
    let m = common::build(&common::doc("one", common::leaf("A", &[Aspect::Begin])));
    let (status, graph) = saturate(&m);
    let gaps = instrumentation_gaps(&m, &status, &graph);
    assert_eq!(gaps.len(), 2);
    for g in gaps {
        let best = &g.suggestions[0];
        assert_eq!(best.missing.len(), 1, "{g:?}");
        assert!(best.rule == rules::R2 || best.rule == rules::R3);
    }
}

#[test]
fn fully_observable_model_has_no_gaps() {
    let m = bundled::hlf();
    let (status, graph) = saturate(&m);
    assert!(instrumentation_gaps(&m, &status, &graph).is_empty());
}

#[test]
fn chaincode_call_gap_suggests_r1_with_duration_and_end_missing() {
    let m = bundled::hlf().with_measured(|_, t| {
        if t.name == "ChaincodeCall" {
            Default::default()
        } else {
            t.measured.clone()
        }
    });
    let (status, graph) = saturate(&m);
    let gaps = instrumentation_gaps(&m, &status, &graph);
    let begin = gaps
        .iter()
        .find(|g| g.activity == "ChaincodeCall" && g.aspect == Aspect::Begin)
        .expect("ChaincodeCall begin is a gap");
    let r1 = begin.suggestions.iter().find(|s| s.rule == rules::R1).unwrap();
    assert_eq!(
        r1.missing,
        vec![("ChaincodeCall".to_string(), Aspect::Duration), ("ChaincodeCall".to_string(), Aspect::End)]
    );
    // suggestions are ranked by how many inputs are missing
    let counts: Vec<usize> = begin.suggestions.iter().map(|s| s.missing.len()).collect();
    assert!(counts.windows(2).all(|w| w[0] <= w[1]));
}

#[test]
fn fully_observed_types_match_all_three_identity_rules() {
    let m = bundled::hlf();
    let (_, graph) = saturate(&m);
    for t in m.ids() {
        let used: BTreeSet<_> = graph.edges.iter().filter(|e| e.target.0 == t).map(|e| e.rule.clone()).collect();
        for r in [rules::R1, rules::R2, rules::R3] {
            assert!(used.contains(&r), "{} lacks {r}", m.ty(t).name);
        }
    }
}

#[test]
fn every_inferred_status_has_a_justifying_edge() {
    let m = bundled::hlf_initial();
    let (status, graph) = saturate(&m);
    for (t, a) in status.observed() {
        if !status.is_measured(t, a) {
            assert!(graph
                .incoming((t, a))
                .any(|e| e.inputs.iter().all(|&(i, ia)| status.is_observed(i, ia))));
        }
    }
}

#[test]
fn inference_report_lists_all_nodes() {
    let m = bundled::hlf();
    let (status, graph) = saturate(&m);
    let report = InferenceReport::new(&m, &status, &graph);
    assert_eq!(report.nodes.len(), 3 * m.len());
    assert_eq!(report.schema_version, "1");
    assert!(report.gaps.is_empty());
}

proptest! {
    #[test]
    fn engine_agrees_with_brute_force(seed in 0u64..10_000) {
        let m = common::random_model(seed, 8);
        let (status, _) = saturate(&m);
        prop_assert_eq!(status.observed(), brute_force(&m, seed));
    }

    #[test]
    fn adding_a_measured_flag_never_removes_observations(seed in 0u64..10_000, pick in any::<prop::sample::Index>(), aspect in 0usize..3) {
        let m = common::random_model(seed, 10);
        let target = ActivityId(pick.index(m.len()));
        let more = m.with_measured(|id, t| {
            let mut s = t.measured.clone();
            if id == target {
                s.insert(Aspect::from_index(aspect));
            }
            s
        });
        let (before, _) = saturate(&m);
        let (after, _) = saturate(&more);
        prop_assert!(before.observed().is_subset(&after.observed()));
    }

    #[test]
    fn saturation_is_confluent_on_random_models(seed in 0u64..10_000, order_seed in any::<u64>()) {
        let m = common::random_model(seed, 10);
        let catalog = RuleCatalog::standard();
        let mut order: Vec<usize> = (0..rule_instances(&m, &catalog).len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(order_seed));
        prop_assert_eq!(saturate_in_order(&m, &catalog, &order), saturate(&m));
    }
}

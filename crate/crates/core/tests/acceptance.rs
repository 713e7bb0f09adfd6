//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
//! the test fails if any criterion does.

mod common;

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempont::derivation::{derive, reduce_replicas, DerivationPlan};
use tempont::drilldown::{detect_anomaly, drill, latency_series, widest_window, DrillOptions, Verdict};
use tempont::model::expand_instance_template;
use tempont::observability::{instrumentation_gaps, rule_instances, saturate, saturate_in_order};
use tempont::sim::{Law, ShortIds, SimConfig, Skew, Spike};
use tempont::trace::{correlate, recover_collisions, CorrelationPolicy, DEFAULT_RECOVERY_WINDOW_US};
use tempont::validation::{check_causality, check_conformance, estimate_drift, FindingKind, Tolerance};
use tempont::{bundled, Aspect, Micros, RuleCatalog, Timeline};

use common::{bindings, run};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn counting_law() -> Outcome {
    let model = bundled::hlf();
    for e in 1..=4 {
        for v in 1..=4 {
            let t = expand_instance_template(&model, &bindings(e, v)).map_err(|x| x.to_string())?;
            let expect = (5 + 13 * e + 10 * v) as usize;
            ensure!(t.len() == expect, "E={e} V={v}: {} slots, expected {expect}", t.len());
        }
    }
    let t = expand_instance_template(&model, &bindings(1, 1)).unwrap();
    ensure!(t.len() == 28 && t.slot_aspect_count() == 84, "E=V=1 gives {} / {}", t.len(), t.slot_aspect_count());
    Ok("16 bindings match 5+13E+10V; 28 slots and 84 slot-aspects at E=V=1".into())
}

/// Aspects left unobserved when the chaincode container is not instrumented,
/// worked out by hand from the model: everything strictly between the
/// chaincode call's begin and end that is not pinned by a measured point.
fn chaincode_gap_fixture() -> BTreeSet<(String, Aspect)> {
    use Aspect::*;
    let mut s = BTreeSet::new();
    for (name, aspects) in [
        ("ChaincodeInvocation", &[Duration, End][..]),
        ("InvocationTransfer", &[Duration, End]),
        ("ChaincodeExecution", &[Begin, Duration, End]),
        ("ChaincodeHandler", &[Begin, Duration, End]),
        ("TpccTransaction", &[Begin, Duration, End]),
        ("TpccBusinessLogic", &[Begin, Duration, End]),
        ("ChaincodeResponse", &[Begin, Duration]),
        ("ResponseTransfer", &[Begin, Duration]),
    ] {
        for &a in aspects {
            s.insert((name.to_string(), a));
        }
    }
    s
}

fn full_observability() -> Outcome {
    let model = bundled::hlf();
    ensure!(model.measured_count() == 18, "{} measured flags", model.measured_count());
    let (status, _) = saturate(&model);
    let t = expand_instance_template(&model, &bindings(1, 1)).unwrap();
    let observed = status.observed_slot_aspects(&t);
    ensure!(observed == 84, "{observed} of 84 slot-aspects observed");

    let stripped = model.with_measured(|_, ty| {
        if ty.name == "ChaincodeExecution" {
            Default::default()
        } else {
            ty.measured.clone()
        }
    });
    let (status, graph) = saturate(&stripped);
    let unobserved: BTreeSet<(String, Aspect)> = status
        .unobserved()
        .into_iter()
        .map(|(id, a)| (stripped.ty(id).name.clone(), a))
        .collect();
    let fixture = chaincode_gap_fixture();
    ensure!(unobserved == fixture, "unobserved {unobserved:?}");
    let gaps: BTreeSet<(String, Aspect)> = instrumentation_gaps(&stripped, &status, &graph)
        .into_iter()
        .map(|g| (g.activity, g.aspect))
        .collect();
    ensure!(gaps == fixture, "gap report names {gaps:?}");
    Ok(format!("84/84 observed; without chaincode sensors {} aspects unobserved and reported", fixture.len()))
}

fn oracle_round_trip() -> Outcome {
    let cfg = SimConfig {
        traces: 1000,
        seed: 11,
        ..SimConfig::default()
    };
    let r = run(&bundled::hlf(), &bindings(2, 3), &cfg);
    let template = r.out.truth.template.clone();
    let mut compared = 0usize;
    for (tl, truth) in r.timelines.iter().zip(&r.out.truth.traces) {
        for s in template.ids() {
            for a in Aspect::ALL {
                let got = tl.resolved(s, a);
                ensure!(
                    got == Some(truth.get(s, a)),
                    "{} {} {a}: {got:?} vs {}",
                    truth.trace_id,
                    template.slot(s).path,
                    truth.get(s, a)
                );
                compared += 1;
            }
        }
    }
    let conf = check_conformance(&r.timelines, Tolerance::new(0));
    let caus = check_causality(&r.timelines, Tolerance::new(0));
    ensure!(conf.findings.is_empty(), "{} conformance findings, first {:?}", conf.findings.len(), conf.findings[0]);
    ensure!(caus.is_empty(), "{} causality findings, first {:?}", caus.len(), caus[0]);
    Ok(format!("{compared} slot-aspects bit-equal over 1000 traces; 0 findings at eps=0"))
}

fn missing_subactivity() -> Outcome {
    let commit_history = Law::uniform(2000.0, 8000.0);
    let mut cfg = SimConfig {
        traces: 1000,
        seed: 4,
        ..SimConfig::default()
    };
    cfg.durations.insert("CommitHistory".into(), commit_history.clone());
    let full = bundled::hlf();
    let r = run(&full, &bindings(1, 1), &cfg);
    let analysis = bundled::hlf_initial();
    let timelines = common::derive_all(&r.out, &r.corr, &analysis);

    let report = check_conformance(&timelines, Tolerance::new(0));
    let flagged: BTreeSet<&str> = report
        .findings
        .iter()
        .filter(|f| {
            matches!(f.kind, FindingKind::MultiPathMismatch | FindingKind::RelationViolation)
                && f.slot.ends_with("/StateValidation")
        })
        .map(|f| f.trace_id.as_str())
        .collect();
    ensure!(flagged.len() == cfg.traces, "{} of {} traces flagged", flagged.len(), cfg.traces);

    let sv = "TransactionProcessing/AwaitingOrderingAndValidation/AwaitingValidation/BlockValidation/StateValidationAndCommit/StateValidation";
    let pair = report
        .distribution
        .get(sv, Aspect::Begin, "B-STARTS", "R1")
        .ok_or("no B-STARTS/R1 distribution for StateValidation begin")?;
    ensure!(pair.count() == cfg.traces, "{} magnitudes", pair.count());
    ensure!(pair.magnitudes.iter().all(|&m| m > 0), "non-positive magnitude");

    // every magnitude is exactly that trace's hidden commit-history time
    let ch = r.out.truth.template.slots_of(full.id_of("CommitHistory").unwrap())[0];
    let mut truth: Vec<Micros> = r.out.truth.traces.iter().map(|t| t.get(ch, Aspect::Duration)).collect();
    let mut mags = pair.magnitudes.clone();
    truth.sort();
    mags.sort();
    ensure!(truth == mags, "magnitudes differ from the injected durations");

    let sample: Vec<f64> = pair.magnitudes.iter().map(|&m| m as f64).collect();
    let (d, p) = common::ks_test(&sample, |x| commit_history.cdf(x));
    ensure!(p > 0.01, "KS D={d:.4} p={p:.4}");
    Ok(format!("violation on 100% of traces; KS D={d:.4} p={p:.3} against the injected law"))
}

fn causality_and_drift() -> Outcome {
    const AMPLITUDE: f64 = 5000.0;
    const PERIOD: f64 = 600e6;
    let skew = Skew::Sinusoid {
        amplitude_us: AMPLITUDE,
        period_us: PERIOD,
        phase: 0.0,
    };
    let mut cfg = SimConfig {
        traces: 2400,
        seed: 5,
        inter_arrival: Law::constant(500_000.0),
        ..SimConfig::default()
    };
    cfg.durations.insert("ReceivingProposal".into(), Law::uniform(10.0, 40.0));
    cfg.skew.insert("peer0".into(), skew.clone());
    cfg.skew.insert("chaincode@peer0".into(), skew.clone());
    let model = bundled::hlf();
    let r = run(&model, &bindings(1, 1), &cfg);
    let t = &r.out.truth.template;
    let rp = t.slots_of(model.id_of("ReceivingProposal").unwrap())[0];
    let cc = t.slots_of(model.id_of("ChaincodeCall").unwrap())[0];

    let findings = check_causality(&r.timelines, Tolerance::default());
    let negative: BTreeSet<&str> = findings
        .iter()
        .filter(|f| f.kind == FindingKind::NegativeDuration && f.slot == t.slot(rp).path.as_ref())
        .map(|f| f.trace_id.as_str())
        .collect();
    ensure!(!negative.is_empty(), "no negative ReceivingProposal durations");
    let named = findings
        .iter()
        .find(|f| f.kind == FindingKind::NegativeDuration && f.slot == t.slot(rp).path.as_ref())
        .unwrap();
    ensure!(
        named.sources == ["client", "peer0"],
        "finding names {:?}",
        named.sources
    );
    // the peer's skew at the instant it logs the end of ReceivingProposal
    let agree = r
        .out
        .truth
        .traces
        .iter()
        .filter(|tr| (skew.at(tr.get(cc, Aspect::Begin)) < 0) == negative.contains(tr.trace_id.as_str()))
        .count();
    let agreement = agree as f64 / cfg.traces as f64;
    ensure!(agreement >= 0.99, "agreement {agreement:.4}");

    let window: Micros = 30_000_000;
    let series = estimate_drift(&r.timelines, window).map_err(|e| e.to_string())?;
    let s = series
        .iter()
        .find(|s| s.activity.ends_with("/ReceivingProposal") && s.end_source == "peer0" && s.begin_source == "client")
        .ok_or("no peer0/client drift series")?;
    let sq: f64 = s
        .points
        .iter()
        .map(|p| {
            let mid = p.window_start_us + window / 2;
            (p.mean_us - skew.at(mid) as f64).powi(2)
        })
        .sum();
    let rms = (sq / s.points.len() as f64).sqrt();
    ensure!(rms <= 1000.0, "drift RMS {rms:.0} us");
    Ok(format!(
        "{} negative durations, {:.2}% agreement with the skew sign; drift RMS {rms:.0} us over {} windows",
        negative.len(),
        agreement * 100.0,
        s.points.len()
    ))
}

fn shortened_ids() -> Outcome {
    let model = bundled::hlf();
    let cfg = SimConfig {
        traces: 3,
        seed: 6,
        inter_arrival: Law::constant(700e6),
        short_ids: Some(ShortIds {
            length: 8,
            activities: vec!["BlockCreation".into()],
        }),
        prefix_collisions: vec![(0, 1)],
        ..SimConfig::default()
    };
    let out = tempont::sim::simulate(&model, &bindings(1, 1), &cfg).unwrap();
    let mut corr = correlate(out.records.clone(), CorrelationPolicy::default());
    let c = &corr.collisions.collisions;
    ensure!(c.len() == 1, "{} collisions", c.len());
    ensure!(c[0].candidates.len() == 2, "{} candidates", c[0].candidates.len());
    ensure!(c[0].records.len() == 2, "{} quarantined records", c[0].records.len());

    let outcome = recover_collisions(&mut corr, DEFAULT_RECOVERY_WINDOW_US);
    ensure!(outcome.assigned.len() == 2 && outcome.still_quarantined == 0, "{outcome:?}");
    let bc = out.truth.template.slots_of(model.id_of("BlockCreation").unwrap())[0];
    for (rec, id) in &outcome.assigned {
        let truth = out.truth.by_id(id).ok_or("unknown trace")?;
        ensure!(truth.get(bc, Aspect::End) == rec.value_us, "record assigned to the wrong trace {id}");
    }
    let plan = DerivationPlan::new(out.truth.template.clone(), &RuleCatalog::standard());
    for tr in &out.truth.traces {
        let tl = derive(&corr.bundles[&tr.trace_id], &plan).map_err(|e| e.to_string())?;
        ensure!(tl.is_fully_resolved(), "{} not fully resolved after recovery", tr.trace_id);
    }
    Ok("one 2-candidate collision; both records recovered onto their own traces".into())
}

/// Runs a drill from the root on the widest anomaly window.
fn drill_root(timelines: &[Timeline]) -> Result<tempont::drilldown::BottleneckNode, String> {
    let series = latency_series(timelines, "TransactionProcessing").map_err(|e| e.to_string())?;
    let windows = detect_anomaly(&series, tempont::drilldown::DEFAULT_K).map_err(|e| e.to_string())?;
    let w = widest_window(&windows).ok_or("no anomaly window on the root series")?;
    drill(timelines, "TransactionProcessing", (w.start_us, w.end_us), DrillOptions::default()).map_err(|e| e.to_string())
}

fn reduced(timelines: &[Timeline]) -> Vec<Timeline> {
    timelines.iter().map(|t| reduce_replicas(t).unwrap()).collect()
}

fn last_segment(p: &str) -> &str {
    p.rsplit('/').next().unwrap_or(p)
}

fn drill_localization() -> Outcome {
    let started = Instant::now();
    let mut max_depth = 0;
    for seed in 0..20 {
        let r = run(&bundled::hlf(), &bindings(1, 1), &common::spike_config(seed));
        let tree = drill_root(&reduced(&r.timelines)).map_err(|e| format!("seed {seed}: {e}"))?;
        let leaves: BTreeSet<&str> = tree.implicated_leaves().into_iter().map(last_segment).collect();
        ensure!(
            leaves == BTreeSet::from(["BlockCommit", "BlockCreation"]),
            "seed {seed}: implicated {leaves:?}\n{}",
            tree.render()
        );
        let endorsement = tree.find("AwaitingEndorsement").ok_or("endorsement missing from tree")?;
        ensure!(endorsement.verdict == Verdict::Dismissed, "seed {seed}: endorsement {:?}", endorsement.verdict);
        ensure!(tree.depth() <= 5, "seed {seed}: depth {}", tree.depth());
        max_depth = max_depth.max(tree.depth());
    }
    let elapsed = started.elapsed();
    ensure!(elapsed < Duration::from_secs(30), "took {elapsed:?}");
    Ok(format!(
        "20/20 seeds implicate exactly BlockCommit and BlockCreation, endorsement dismissed, depth {max_depth}, {:.1}s",
        elapsed.as_secs_f64()
    ))
}

fn confluence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let catalog = RuleCatalog::standard();
    let models = [bundled::hlf(), bundled::hlf_initial(), common::alternating_model(None)];
    for model in &models {
        let (reference, graph) = saturate(model);
        let n = rule_instances(model, &catalog).len();
        for _ in 0..100 {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            let (status, g) = saturate_in_order(model, &catalog, &order);
            ensure!(status == reference, "{}: status depends on rule order", model.name());
            ensure!(g.edges.len() == graph.edges.len(), "{}: graph depends on rule order", model.name());
        }
    }
    Ok("identical saturation for 100 rule orders on 3 models".into())
}

fn determinism() -> Outcome {
    let mut cfg = SimConfig {
        traces: 40,
        seed: 9,
        ..SimConfig::default()
    };
    // skew makes derivation paths disagree, which is where order could matter
    cfg.skew.insert("peer1".into(), Skew::Constant { offset_us: 700 });
    cfg.log_delays.push(tempont::sim::LogDelay {
        activity: "CheckPayload".into(),
        max_us: 300,
    });
    let r = run(&bundled::hlf(), &bindings(2, 2), &cfg);
    let plan = DerivationPlan::new(r.out.truth.template.clone(), &RuleCatalog::standard());
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..5 {
        let mut order: Vec<usize> = (0..plan.instance_count()).collect();
        order.shuffle(&mut rng);
        let permuted = plan.permuted(&order);
        for (tl, tr) in r.timelines.iter().zip(&r.out.truth.traces) {
            let again = derive(&r.corr.bundles[&tr.trace_id], &permuted).unwrap();
            ensure!(
                serde_json::to_string(&tl.to_doc()).unwrap() == serde_json::to_string(&again.to_doc()).unwrap(),
                "{}: derivations depend on rule order",
                tr.trace_id
            );
        }
    }
    Ok("derivations identical under 5 rule orders on 40 skewed traces".into())
}

/// Randomized single-leaf spikes. Every run must implicate exactly the
/// spiked leaf and never implicate an activity off its ancestor path.
fn dismissal_and_localization() -> Outcome {
    let model = bundled::hlf();
    let leaves: Vec<String> = model
        .ids()
        .filter(|&id| model.is_leaf(id))
        .map(|id| model.ty(id).name.clone())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for run_ix in 0..100u64 {
        let leaf = leaves.choose(&mut rng).unwrap().clone();
        let start = rng.random_range(20..150) as Micros * 100_000;
        let len = rng.random_range(20..=40) as Micros * 100_000;
        let cfg = SimConfig {
            traces: 200,
            seed: 100 + run_ix,
            default_duration: Law::uniform(900.0, 1100.0),
            spikes: vec![Spike {
                activity: leaf.clone(),
                start_us: start,
                end_us: start + len,
                multiplier: rng.random_range(3.0..5.0),
                decay_us: None,
            }],
            ..SimConfig::default()
        };
        let r = run(&model, &bindings(1, 1), &cfg);
        let tree = drill_root(&reduced(&r.timelines)).map_err(|e| format!("run {run_ix} ({leaf}): {e}"))?;
        let spiked = model.type_path(model.id_of(&leaf).unwrap());
        let mut off_path = Vec::new();
        tree.walk(&mut |n| {
            if n.verdict != Verdict::Dismissed && !spiked.starts_with(&n.activity) {
                off_path.push(n.activity.clone());
            }
        });
        ensure!(off_path.is_empty(), "run {run_ix} ({leaf}): unchanged {off_path:?} implicated");
        let found: Vec<&str> = tree.implicated_leaves();
        ensure!(found == [spiked.as_str()], "run {run_ix} ({leaf}): implicated {found:?}\n{}", tree.render());
    }
    Ok("100 randomized leaf spikes localized exactly, no unchanged activity implicated".into())
}

fn property_suites() -> Outcome {
    let parts = [confluence()?, determinism()?, dismissal_and_localization()?];
    Ok(parts.join("; "))
}

#[test]
fn acceptance() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("counting law", counting_law),
        ("full-observability saturation", full_observability),
        ("oracle round trip", oracle_round_trip),
        ("missing-subactivity detection", missing_subactivity),
        ("causality violations and drift", causality_and_drift),
        ("shortened-id collision", shortened_ids),
        ("drill-down localization", drill_localization),
        ("property suites", property_suites),
    ];
    let mut failed = Vec::new();
    for (i, (name, f)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {}: PASS {name} ({secs:.1}s): {detail}", i + 1),
            Err(why) => {
                println!("criterion {}: FAIL {name} ({secs:.1}s): {why}", i + 1);
                failed.push(i + 1);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}

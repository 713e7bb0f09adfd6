#![allow(dead_code)]

use std::sync::Arc;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempont::derivation::{derive, DerivationPlan};
use tempont::model::{ActivityDecl, ActivityKind, ModelDocument, SyncSemantic};
use tempont::sim::{simulate, SimConfig, SimOutput};
use tempont::trace::{correlate, ingest, write_jsonl, Correlation, CorrelationPolicy, Format};
use tempont::{ActivityModel, Aspect, Bindings, RuleCatalog, Timeline};

pub fn bindings(e: i64, v: i64) -> Bindings {
    Bindings::new().with("E", e).with("V", v)
}

pub struct Run {
    pub out: SimOutput,
    pub corr: Correlation,
    /// Aligned with `out.truth.traces`.
    pub timelines: Vec<Timeline>,
}

/// simulate, serialize as JSONL, ingest, correlate and derive.
pub fn run(model: &ActivityModel, b: &Bindings, cfg: &SimConfig) -> Run {
    let out = simulate(model, b, cfg).expect("simulation");
    let mut buf = Vec::new();
    write_jsonl(&mut buf, &out.records).unwrap();
    let ingested = ingest(buf.as_slice(), Format::Jsonl).unwrap();
    assert!(ingested.rejects.is_empty(), "{:?}", ingested.rejects);
    let corr = correlate(ingested.records, CorrelationPolicy::default());
    let timelines = derive_all(&out, &corr, model);
    Run { out, corr, timelines }
}

/// Derives against `analysis` (which may differ from the simulated model).
pub fn derive_all(out: &SimOutput, corr: &Correlation, analysis: &ActivityModel) -> Vec<Timeline> {
    let template = if std::ptr::eq(analysis, out.truth.template.model()) {
        out.truth.template.clone()
    } else {
        Arc::new(tempont::model::expand_instance_template(analysis, out.truth.template.bindings()).unwrap())
    };
    let plan = DerivationPlan::new(template, &RuleCatalog::standard());
    out.truth
        .traces
        .iter()
        .map(|t| match corr.bundles.get(&t.trace_id) {
            Some(b) => derive(b, &plan).unwrap(),
            None => Timeline::empty(t.trace_id.clone(), plan.template().clone()),
        })
        .collect()
}

pub fn leaf(name: &str, measured: &[Aspect]) -> ActivityDecl {
    ActivityDecl {
        name: name.into(),
        kind: ActivityKind::Atomic,
        sync: None,
        service: None,
        measured: measured.to_vec(),
        multiplicity: None,
        children: Vec::new(),
    }
}

pub fn composite(name: &str, kind: ActivityKind, measured: &[Aspect], children: Vec<ActivityDecl>) -> ActivityDecl {
    ActivityDecl {
        name: name.into(),
        kind,
        sync: (kind == ActivityKind::Forked).then_some(SyncSemantic::WaitForAll),
        service: None,
        measured: measured.to_vec(),
        multiplicity: None,
        children,
    }
}

pub fn doc(name: &str, root: ActivityDecl) -> ModelDocument {
    ModelDocument {
        name: name.into(),
        imports: Vec::new(),
        aliases: Vec::new(),
        activities: vec![root],
        relations: Vec::new(),
    }
}

pub fn build(d: &ModelDocument) -> ActivityModel {
    let mut loader = tempont::model::ModelLoader::new();
    loader.add_document(d.clone()).expect("valid document");
    loader.finish().expect("valid model")
}

pub const ALT_CHILDREN: [&str; 3] = ["Compute", "Read", "Write"];

/// `Job = Prep ; Work ; Tail` where `Work` alternates between three parts
/// whose durations are all measured. `omit` drops one part from the model.
pub fn alternating_model(omit: Option<&str>) -> ActivityModel {
    use Aspect::*;
    let parts = ALT_CHILDREN
        .iter()
        .filter(|n| Some(**n) != omit)
        .map(|n| leaf(n, &[Duration]))
        .collect();
    build(&doc(
        "alternating",
        composite(
            "Job",
            ActivityKind::Sequential,
            &[Begin, End],
            vec![
                leaf("Prep", &[End]),
                composite("Work", ActivityKind::Alternating, &[End], parts),
                leaf("Tail", &[Duration]),
            ],
        ),
    ))
}

/// A random tree of at most `max_types` activities with random measured
/// flags and no multiplicities.
pub fn random_model(seed: u64, max_types: usize) -> ActivityModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let target = rng.random_range(1..=max_types);
    let mut counter = 0;
    let root = grow(&mut rng, &mut counter, target, 0);
    build(&doc(&format!("random-{seed}"), root))
}

fn random_measured(rng: &mut ChaCha8Rng) -> Vec<Aspect> {
    Aspect::ALL.into_iter().filter(|_| rng.random_bool(0.3)).collect()
}

fn grow(rng: &mut ChaCha8Rng, counter: &mut usize, budget: usize, depth: usize) -> ActivityDecl {
    *counter += 1;
    let name = format!("A{counter}");
    let measured = random_measured(rng);
    // budget counts this node plus its descendants
    if budget < 3 || depth > 3 || rng.random_bool(0.2) {
        return leaf(&name, &measured);
    }
    let kind = *[ActivityKind::Sequential, ActivityKind::Forked, ActivityKind::Alternating]
        .choose(rng)
        .unwrap();
    let mut left = budget - 1;
    let n_kids = rng.random_range(2..=left.min(4));
    let mut kids = Vec::new();
    for i in 0..n_kids {
        let remaining_kids = n_kids - i - 1;
        let share = if remaining_kids == 0 {
            left
        } else {
            rng.random_range(1..=(left - remaining_kids).min(4))
        };
        left -= share;
        kids.push(grow(rng, counter, share, depth + 1));
    }
    let mut c = composite(&name, kind, &measured, kids);
    if kind == ActivityKind::Forked && rng.random_bool(0.5) {
        c.sync = Some(SyncSemantic::WaitForAny);
    }
    c
}

/// One-sample Kolmogorov-Smirnov statistic and asymptotic p-value.
pub fn ks_test(sample: &[f64], cdf: impl Fn(f64) -> f64) -> (f64, f64) {
    let mut x = sample.to_vec();
    x.sort_by(f64::total_cmp);
    let n = x.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &v) in x.iter().enumerate() {
        let f = cdf(v);
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    let lambda = (n.sqrt() + 0.12 + 0.11 / n.sqrt()) * d;
    if lambda < 0.2 {
        // the series below converges poorly there; the tail is 1 anyway
        return (d, 1.0);
    }
    let mut p = 0.0;
    for k in 1..=100 {
        let k = k as f64;
        p += 2.0 * (-1f64).powf(k - 1.0) * (-2.0 * k * k * lambda * lambda).exp();
    }
    (d, p.clamp(0.0, 1.0))
}

/// The bundled drill-down scenario's simulation config, with another seed.
pub fn spike_config(seed: u64) -> SimConfig {
    let mut cfg = SimConfig::from_json(include_str!("../../../../scenarios/spike/sim.json")).unwrap();
    cfg.seed = seed;
    cfg
}

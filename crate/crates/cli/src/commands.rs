use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use rayon::prelude::*;
use serde::Serialize;
use tempont::derivation::{derive, reduce_replicas, DerivationPlan};
use tempont::drilldown::{detect_anomaly, drill, latency_series, widest_window, BottleneckNode, DrillOptions};
use tempont::model::validate_well_formedness;
use tempont::observability::{saturate, InferenceReport};
use tempont::sim::{simulate_template, SimConfig};
use tempont::trace::{
    completeness_check, correlate, ingest, recover_collisions, write_csv, write_jsonl, CompletenessReport,
    CorrelationPolicy, Format,
};
use tempont::validation::{check_causality, check_conformance, drift_findings, error_count, estimate_drift, Tolerance};
use tempont::{Bindings, Micros, RuleCatalog, SCHEMA_VERSION};

use crate::files::{self, BundlesFile, DeriveFailure, Provenance, RecordsFile, Sink, TimelinesFile, TruthFile};

/// How a successful command ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Clean,
    /// Findings above the error threshold, or an implicated leaf.
    Flagged,
}

impl Status {
    pub fn and(self, other: Status) -> Status {
        if self == Status::Flagged || other == Status::Flagged {
            Status::Flagged
        } else {
            Status::Clean
        }
    }
}

pub fn model_validate(paths: &[PathBuf]) -> Result<Status> {
    let model = files::load_model(paths)?;
    let violations = validate_well_formedness(&model);
    if violations.is_empty() {
        println!("{}: well-formed ({} activity types)", model.name(), model.len());
        return Ok(Status::Clean);
    }
    for v in &violations {
        println!("{} {}: {}", v.code, v.activity, v.detail);
    }
    Ok(Status::Flagged)
}

#[derive(Serialize)]
struct SlotView<'a> {
    path: &'a str,
    type_path: &'a str,
    source: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    replica: Option<&'a str>,
}

#[derive(Serialize)]
struct ExpandOutput<'a> {
    schema_version: &'static str,
    model: &'a str,
    bindings: &'a Bindings,
    slot_aspects: usize,
    slots: Vec<SlotView<'a>>,
}

pub fn model_expand(paths: &[PathBuf], bindings: &Bindings, out: Option<PathBuf>) -> Result<Status> {
    let model = files::load_model(paths)?;
    let tpl = files::template(&model, bindings)?;
    let view = ExpandOutput {
        schema_version: SCHEMA_VERSION,
        model: model.name(),
        bindings,
        slot_aspects: tpl.slot_aspect_count(),
        slots: tpl
            .slots()
            .iter()
            .map(|s| SlotView {
                path: &s.path,
                type_path: &s.type_path,
                source: &s.source,
                replica: s.discriminator.as_deref(),
            })
            .collect(),
    };
    let sink = Sink::new(out);
    sink.json(&view)?;
    sink.say(format!("{} slots", tpl.len()));
    Ok(Status::Clean)
}

pub fn infer(paths: &[PathBuf], out: Option<PathBuf>) -> Result<Status> {
    let model = files::load_model(paths)?;
    let (status, graph) = saturate(&model);
    let report = InferenceReport::new(&model, &status, &graph);
    let sink = Sink::new(out);
    sink.json(&report)?;
    let observed = status.observed().len();
    let mut text = format!("{observed} of {} aspects observable\n", 3 * model.len());
    for g in &report.gaps {
        let _ = write!(text, "gap {}.{}", g.activity, g.aspect);
        match g.suggestions.first() {
            Some(s) => {
                let need: Vec<String> = s.missing.iter().map(|(a, asp)| format!("{a}.{asp}")).collect();
                let _ = writeln!(text, ": via {} measure {}", s.rule, need.join(" + "));
            }
            None => text.push_str(": no rule reaches it\n"),
        }
    }
    sink.say(text);
    Ok(Status::Clean)
}

pub struct SimulateArgs<'a> {
    pub model: &'a [PathBuf],
    pub bindings: &'a Bindings,
    pub config: Option<&'a Path>,
    pub seed: Option<u64>,
    pub traces: Option<usize>,
    pub out: &'a Path,
    pub format: Format,
    pub truth: Option<&'a Path>,
}

pub fn simulate(a: SimulateArgs) -> Result<Status> {
    let model = files::load_model(a.model)?;
    let mut cfg = match a.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("cannot read {}", p.display()))?;
            SimConfig::from_json(&text).with_context(|| format!("in {}", p.display()))?
        }
        None => SimConfig::default(),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(n) = a.traces {
        cfg.traces = n;
    }
    let tpl = files::template(&model, a.bindings)?;
    let out = simulate_template(tpl, &cfg)?;
    let mut w = files::create(a.out)?;
    match a.format {
        Format::Jsonl => write_jsonl(&mut w, &out.records)?,
        Format::Csv => write_csv(&mut w, &out.records)?,
    }
    w.flush()?;
    if let Some(t) = a.truth {
        let mut inputs: Vec<&Path> = a.model.iter().map(PathBuf::as_path).collect();
        inputs.extend(a.config);
        files::write_json(
            t,
            &TruthFile {
                schema_version: SCHEMA_VERSION.into(),
                provenance: Provenance::new("simulate", &inputs),
                bindings: a.bindings.clone(),
                traces: out.truth.to_docs(),
            },
        )?;
    }
    println!("{} traces, {} records -> {}", cfg.traces, out.records.len(), a.out.display());
    Ok(Status::Clean)
}

pub fn ingest_records(input: &Path, format: Format, out: Option<PathBuf>) -> Result<Status> {
    let got = ingest(files::open(input)?, format)?;
    let sink = Sink::new(out);
    let n = (got.records.len(), got.rejects.len());
    sink.json(&RecordsFile {
        schema_version: SCHEMA_VERSION.into(),
        provenance: Provenance::new("ingest", &[input]),
        records: got.records,
        rejects: got.rejects,
    })?;
    sink.say(format!("{} records, {} rejected lines", n.0, n.1));
    Ok(Status::Clean)
}

pub struct CorrelateArgs<'a> {
    pub input: &'a Path,
    pub prefix_len: usize,
    pub recover: bool,
    pub window_us: Micros,
    pub out: Option<PathBuf>,
}

pub fn correlate_records(a: CorrelateArgs) -> Result<Status> {
    let file: RecordsFile = files::read_json(a.input)?;
    files::check_schema(&file.schema_version, a.input)?;
    let mut corr = correlate(file.records, CorrelationPolicy { prefix_len: a.prefix_len });
    let recovery = a.recover.then(|| recover_collisions(&mut corr, a.window_us));
    let sink = Sink::new(a.out);
    let mut summary = format!(
        "{} bundles, {} collisions holding {} records",
        corr.bundles.len(),
        corr.collisions.collisions.len(),
        corr.collisions.quarantined()
    );
    if let Some(r) = &recovery {
        let _ = write!(summary, "; recovered {} records", r.assigned.len());
    }
    sink.json(&BundlesFile {
        schema_version: SCHEMA_VERSION.into(),
        provenance: Provenance::new("correlate", &[a.input]),
        bundles: corr.bundles.into_values().collect(),
        collisions: corr.collisions,
        recovery,
    })?;
    sink.say(summary);
    Ok(Status::Clean)
}

#[derive(Serialize)]
struct CompletenessOutput {
    schema_version: &'static str,
    provenance: Provenance,
    #[serde(flatten)]
    report: CompletenessReport,
}

pub fn check_completeness(model: &[PathBuf], bindings: &Bindings, bundles: &Path, out: Option<PathBuf>) -> Result<Status> {
    let m = files::load_model(model)?;
    let tpl = files::template(&m, bindings)?;
    let file: BundlesFile = files::read_json(bundles)?;
    files::check_schema(&file.schema_version, bundles)?;
    let report = completeness_check(file.bundles.iter(), &tpl);
    let mut text = format!(
        "{} traces checked, {} incomplete\n",
        report.traces_checked,
        report.per_trace.len()
    );
    for (src, s) in &report.by_source {
        let _ = writeln!(
            text,
            "{src}: {} missing records, {} traces missing some, {} missing all, {} surplus",
            s.missing_records, s.traces_missing_any, s.traces_missing_all, s.surplus_records
        );
    }
    let mut inputs: Vec<&Path> = model.iter().map(PathBuf::as_path).collect();
    inputs.push(bundles);
    let sink = Sink::new(out);
    sink.json(&CompletenessOutput {
        schema_version: SCHEMA_VERSION,
        provenance: Provenance::new("check-completeness", &inputs),
        report,
    })?;
    sink.say(text);
    Ok(Status::Clean)
}

pub struct DeriveArgs<'a> {
    pub model: &'a [PathBuf],
    pub bindings: &'a Bindings,
    pub bundles: &'a Path,
    pub reduce: bool,
    pub jobs: usize,
    pub out: Option<PathBuf>,
}

pub fn derive_timelines(a: DeriveArgs) -> Result<Status> {
    let m = files::load_model(a.model)?;
    let tpl = files::template(&m, a.bindings)?;
    let file: BundlesFile = files::read_json(a.bundles)?;
    files::check_schema(&file.schema_version, a.bundles)?;
    let plan = DerivationPlan::new(tpl, &RuleCatalog::standard());
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(a.jobs.max(1))
        .build()
        .context("cannot start worker threads")?;
    let results: Vec<_> = pool.install(|| {
        file.bundles
            .par_iter()
            .map(|b| {
                let t = derive(b, &plan)?;
                if a.reduce {
                    reduce_replicas(&t)
                } else {
                    Ok(t)
                }
            })
            .collect()
    });
    let mut timelines = Vec::new();
    let mut failures = Vec::new();
    for (b, r) in file.bundles.iter().zip(results) {
        match r {
            Ok(t) => timelines.push(t.to_doc()),
            Err(e) => failures.push(DeriveFailure {
                trace_id: b.trace_id.clone(),
                error: e.to_string(),
            }),
        }
    }
    let resolved: usize = timelines
        .iter()
        .map(|t| t.slots.values().map(|a| a.len()).sum::<usize>())
        .sum();
    let summary = format!(
        "{} timelines, {} resolved slot aspects, {} failures",
        timelines.len(),
        resolved,
        failures.len()
    );
    let mut inputs: Vec<&Path> = a.model.iter().map(PathBuf::as_path).collect();
    inputs.push(a.bundles);
    let sink = Sink::new(a.out);
    sink.json(&TimelinesFile {
        schema_version: SCHEMA_VERSION.into(),
        provenance: Provenance::new("derive", &inputs),
        bindings: a.bindings.clone(),
        reduced: a.reduce,
        timelines,
        failures,
    })?;
    sink.say(summary);
    Ok(Status::Clean)
}

pub struct CheckArgs<'a> {
    pub model: &'a [PathBuf],
    pub bindings: &'a Bindings,
    pub timelines: &'a Path,
    pub epsilon_us: Micros,
    pub out: Option<PathBuf>,
    pub distribution: Option<&'a Path>,
    pub bucket_us: Micros,
    pub drift: Option<&'a Path>,
    pub drift_window_us: Micros,
}

pub fn check(a: CheckArgs) -> Result<Status> {
    let m = files::load_model(a.model)?;
    let tpl = files::template(&m, a.bindings)?;
    let file: TimelinesFile = files::read_json(a.timelines)?;
    files::check_schema(&file.schema_version, a.timelines)?;
    let timelines = files::timelines(file, &tpl)?;
    let tol = Tolerance::new(a.epsilon_us);

    let report = check_conformance(&timelines, tol);
    let mut findings = report.findings;
    findings.extend(check_causality(&timelines, tol));
    if let Some(p) = a.drift {
        let series = estimate_drift(&timelines, a.drift_window_us)?;
        let mut w = files::create(p)?;
        writeln!(w, "activity,end_source,begin_source,window_start_us,mean_us,samples")?;
        for s in &series {
            for pt in &s.points {
                writeln!(
                    w,
                    "{},{},{},{},{:.3},{}",
                    s.activity, s.end_source, s.begin_source, pt.window_start_us, pt.mean_us, pt.samples
                )?;
            }
        }
        w.flush()?;
        findings.extend(drift_findings(&series));
    }
    if let Some(p) = a.distribution {
        std::fs::write(p, report.distribution.to_csv(a.bucket_us))
            .with_context(|| format!("cannot write {}", p.display()))?;
    }

    let sink = Sink::new(a.out);
    let mut w = sink.writer()?;
    for f in &findings {
        serde_json::to_writer(&mut w, f)?;
        writeln!(w)?;
    }
    w.flush()?;
    drop(w);

    let errors = error_count(&findings);
    let mut by_kind: BTreeMap<String, usize> = BTreeMap::new();
    for f in &findings {
        *by_kind.entry(format!("{:?}", f.kind)).or_default() += 1;
    }
    let mut text = format!(
        "{} traces, {} checks ({} identity, {} relation, {} multi-path); {} findings, {} errors at epsilon {} us\n",
        timelines.len(),
        report.checks.total(),
        report.checks.identity,
        report.checks.relation,
        report.checks.multipath,
        findings.len(),
        errors,
        a.epsilon_us
    );
    for (k, n) in by_kind {
        let _ = writeln!(text, "  {k}: {n}");
    }
    sink.say(text);
    Ok(if errors > 0 { Status::Flagged } else { Status::Clean })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindowSpec {
    Auto,
    Range(Micros, Micros),
}

impl std::str::FromStr for WindowSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "auto" {
            return Ok(WindowSpec::Auto);
        }
        let (a, b) = s.split_once(':').ok_or("expected `auto` or START_US:END_US")?;
        let a: Micros = a.trim().parse().map_err(|_| format!("bad window start `{a}`"))?;
        let b: Micros = b.trim().parse().map_err(|_| format!("bad window end `{b}`"))?;
        if a > b {
            return Err(format!("window start {a} is after its end {b}"));
        }
        Ok(WindowSpec::Range(a, b))
    }
}

#[derive(Serialize)]
struct DrillOutput {
    schema_version: &'static str,
    provenance: Provenance,
    window: Option<(Micros, Micros)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    tree: Option<BottleneckNode>,
}

pub struct DrillArgs<'a> {
    pub model: &'a [PathBuf],
    pub bindings: &'a Bindings,
    pub timelines: &'a Path,
    pub root: &'a str,
    pub window: WindowSpec,
    pub k: f64,
    pub share: f64,
    pub epsilon_us: Micros,
    pub series: Option<(&'a str, &'a Path)>,
    pub out: Option<PathBuf>,
}

pub fn drill_down(a: DrillArgs) -> Result<Status> {
    let m = files::load_model(a.model)?;
    let tpl = files::template(&m, a.bindings)?;
    let file: TimelinesFile = files::read_json(a.timelines)?;
    files::check_schema(&file.schema_version, a.timelines)?;
    let timelines = files::timelines(file, &tpl)?;

    if let Some((activity, path)) = a.series {
        let s = latency_series(&timelines, activity)?;
        std::fs::write(path, s.to_csv()).with_context(|| format!("cannot write {}", path.display()))?;
    }

    let mut text = String::new();
    let window = match a.window {
        WindowSpec::Range(x, y) => Some((x, y)),
        WindowSpec::Auto => {
            let series = latency_series(&timelines, a.root)?;
            let windows = detect_anomaly(&series, a.k)?;
            for w in &windows {
                let _ = writeln!(
                    text,
                    "anomaly {}..{} us: {} traces, peak {} us over baseline median {:.0} us{}",
                    w.start_us,
                    w.end_us,
                    w.points,
                    w.peak_us,
                    w.baseline.median_us,
                    if w.baseline.low_confidence { " (low confidence)" } else { "" }
                );
            }
            widest_window(&windows).map(|w| (w.start_us, w.end_us))
        }
    };
    let tree = match window {
        Some(w) => Some(drill(
            &timelines,
            a.root,
            w,
            DrillOptions {
                share: a.share,
                epsilon_us: a.epsilon_us,
            },
        )?),
        None => {
            text.push_str("no anomaly window found\n");
            None
        }
    };
    let flagged = tree.as_ref().is_some_and(|t| !t.implicated_leaves().is_empty());
    if let Some(t) = &tree {
        text.push_str(&t.render());
    }
    let mut inputs: Vec<&Path> = a.model.iter().map(PathBuf::as_path).collect();
    inputs.push(a.timelines);
    let sink = Sink::new(a.out);
    sink.json(&DrillOutput {
        schema_version: SCHEMA_VERSION,
        provenance: Provenance::new("drill", &inputs),
        window,
        tree,
    })?;
    sink.say(text);
    Ok(if flagged { Status::Flagged } else { Status::Clean })
}

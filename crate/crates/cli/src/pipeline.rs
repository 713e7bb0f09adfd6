//! Runs every stage from one manifest file and records what it did.

use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use tempont::drilldown::{DEFAULT_K, DEFAULT_SHARE};
use tempont::trace::{Format, DEFAULT_PREFIX_LEN, DEFAULT_RECOVERY_WINDOW_US};
use tempont::{Bindings, Micros, SCHEMA_VERSION};

use crate::commands::{self, Status, WindowSpec};
use crate::files;

fn default_root() -> String {
    "TransactionProcessing".into()
}
fn default_window() -> String {
    "auto".into()
}
fn default_k() -> f64 {
    DEFAULT_K
}
fn default_share() -> f64 {
    DEFAULT_SHARE
}
fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}
fn default_true() -> bool {
    true
}
fn default_jobs() -> usize {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DrillSection {
    #[serde(default = "default_root")]
    pub root: String,
    #[serde(default = "default_window")]
    pub window: String,
    #[serde(default = "default_k")]
    pub k: f64,
    #[serde(default = "default_share")]
    pub share: f64,
}

impl Default for DrillSection {
    fn default() -> Self {
        DrillSection {
            root: default_root(),
            window: default_window(),
            k: default_k(),
            share: default_share(),
        }
    }
}

/// Pipeline input. Relative paths are resolved against the manifest's
/// directory. Exactly one of `simulation` and `records` must be given.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub model: Vec<PathBuf>,
    pub bindings: String,
    #[serde(default)]
    pub simulation: Option<PathBuf>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub records: Option<PathBuf>,
    #[serde(default)]
    pub format: Option<String>,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub epsilon_us: Option<Micros>,
    #[serde(default)]
    pub recover_collisions: bool,
    #[serde(default = "default_true")]
    pub reduce: bool,
    #[serde(default = "default_jobs")]
    pub jobs: usize,
    #[serde(default)]
    pub drill: DrillSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub flagged: bool,
    pub millis: u128,
}

/// Written to `run.json` in the output directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: String,
    pub tool: String,
    pub manifest: String,
    pub model: Vec<String>,
    pub bindings: Bindings,
    pub seed: Option<u64>,
    pub epsilon_us: Micros,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
    pub stages: Vec<StageRecord>,
    pub exit_code: i32,
}

fn now_ms() -> u128 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis())
}

fn shown(paths: &[&Path]) -> Vec<String> {
    paths.iter().map(|p| p.display().to_string()).collect()
}

struct Runner {
    stages: Vec<StageRecord>,
    status: Status,
}

impl Runner {
    fn stage(
        &mut self,
        name: &str,
        inputs: &[&Path],
        outputs: &[&Path],
        f: impl FnOnce() -> Result<Status>,
    ) -> Result<()> {
        println!("== {name}");
        let t = Instant::now();
        let st = f().with_context(|| format!("stage `{name}`"))?;
        self.status = self.status.and(st);
        self.stages.push(StageRecord {
            stage: name.into(),
            inputs: shown(inputs),
            outputs: shown(outputs),
            flagged: st == Status::Flagged,
            millis: t.elapsed().as_millis(),
        });
        Ok(())
    }
}

pub fn run(manifest_path: &Path, default_epsilon: Micros) -> Result<Status> {
    let started = now_ms();
    let m: Manifest = files::read_json(manifest_path).context("stage `manifest`")?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let at = |p: &Path| base.join(p);
    let bindings: Bindings = m
        .bindings
        .parse()
        .map_err(|e: String| anyhow::anyhow!(e))
        .context("stage `manifest`: bindings")?;
    let window: WindowSpec = m
        .drill
        .window
        .parse()
        .map_err(|e: String| anyhow::anyhow!(e))
        .context("stage `manifest`: drill window")?;
    let model: Vec<PathBuf> = m.model.iter().map(|p| at(p)).collect();
    let out = at(&m.out_dir);
    let eps = m.epsilon_us.unwrap_or(default_epsilon);
    let model_refs: Vec<&Path> = model.iter().map(PathBuf::as_path).collect();

    let records_path = out.join("records.json");
    let bundles_path = out.join("bundles.json");
    let completeness_path = out.join("completeness.json");
    let timelines_path = out.join("timelines.json");
    let reduced_path = out.join("reduced.json");
    let findings_path = out.join("findings.jsonl");
    let distribution_path = out.join("distribution.csv");
    let drill_path = out.join("drill.json");
    let series_path = out.join("series.csv");

    let mut r = Runner {
        stages: Vec::new(),
        status: Status::Clean,
    };

    r.stage("model validate", &model_refs, &[], || commands::model_validate(&model))?;
    if r.status == Status::Flagged {
        bail!("stage `model validate`: the model is not well formed");
    }

    let (raw, format) = match (&m.simulation, &m.records) {
        (Some(sim), None) => {
            let sim = at(sim);
            let traces = out.join("traces.jsonl");
            let truth = out.join("truth.json");
            let mut inputs = model_refs.clone();
            inputs.push(&sim);
            r.stage("simulate", &inputs, &[&traces, &truth], || {
                commands::simulate(commands::SimulateArgs {
                    model: &model,
                    bindings: &bindings,
                    config: Some(&sim),
                    seed: m.seed,
                    traces: None,
                    out: &traces,
                    format: Format::Jsonl,
                    truth: Some(&truth),
                })
            })?;
            (traces, Format::Jsonl)
        }
        (None, Some(rec)) => {
            let format: Format = m
                .format
                .as_deref()
                .unwrap_or("jsonl")
                .parse()
                .context("stage `manifest`: format")?;
            (at(rec), format)
        }
        _ => bail!("stage `manifest`: give exactly one of `simulation` and `records`"),
    };

    r.stage("ingest", &[&raw], &[&records_path], || {
        commands::ingest_records(&raw, format, Some(records_path.clone()))
    })?;
    r.stage("correlate", &[&records_path], &[&bundles_path], || {
        commands::correlate_records(commands::CorrelateArgs {
            input: &records_path,
            prefix_len: DEFAULT_PREFIX_LEN,
            recover: m.recover_collisions,
            window_us: DEFAULT_RECOVERY_WINDOW_US,
            out: Some(bundles_path.clone()),
        })
    })?;
    let mut with_bundles = model_refs.clone();
    with_bundles.push(&bundles_path);
    r.stage("check-completeness", &with_bundles, &[&completeness_path], || {
        commands::check_completeness(&model, &bindings, &bundles_path, Some(completeness_path.clone()))
    })?;
    r.stage("derive", &with_bundles, &[&timelines_path], || {
        commands::derive_timelines(commands::DeriveArgs {
            model: &model,
            bindings: &bindings,
            bundles: &bundles_path,
            reduce: false,
            jobs: m.jobs,
            out: Some(timelines_path.clone()),
        })
    })?;
    let mut with_timelines = model_refs.clone();
    with_timelines.push(&timelines_path);
    r.stage("check", &with_timelines, &[&findings_path, &distribution_path], || {
        commands::check(commands::CheckArgs {
            model: &model,
            bindings: &bindings,
            timelines: &timelines_path,
            epsilon_us: eps,
            out: Some(findings_path.clone()),
            distribution: Some(&distribution_path),
            bucket_us: eps.max(1),
            drift: None,
            drift_window_us: 0,
        })
    })?;
    let drill_input = if m.reduce {
        r.stage("derive --reduce", &with_bundles, &[&reduced_path], || {
            commands::derive_timelines(commands::DeriveArgs {
                model: &model,
                bindings: &bindings,
                bundles: &bundles_path,
                reduce: true,
                jobs: m.jobs,
                out: Some(reduced_path.clone()),
            })
        })?;
        &reduced_path
    } else {
        &timelines_path
    };
    let mut drill_inputs = model_refs.clone();
    drill_inputs.push(drill_input);
    r.stage("drill", &drill_inputs, &[&drill_path, &series_path], || {
        commands::drill_down(commands::DrillArgs {
            model: &model,
            bindings: &bindings,
            timelines: drill_input,
            root: &m.drill.root,
            window,
            k: m.drill.k,
            share: m.drill.share,
            epsilon_us: eps,
            series: Some((&m.drill.root, &series_path)),
            out: Some(drill_path.clone()),
        })
    })?;

    let status = r.status;
    let run = RunManifest {
        schema_version: SCHEMA_VERSION.into(),
        tool: concat!("tempont ", env!("CARGO_PKG_VERSION")).into(),
        manifest: manifest_path.display().to_string(),
        model: shown(&model_refs),
        bindings,
        seed: m.seed,
        epsilon_us: eps,
        started_unix_ms: started,
        finished_unix_ms: now_ms(),
        stages: r.stages,
        exit_code: crate::exit_code(status),
    };
    let run_path = out.join("run.json");
    files::write_json(&run_path, &run).context("stage `pipeline`")?;
    println!("run manifest -> {}", run_path.display());
    Ok(status)
}

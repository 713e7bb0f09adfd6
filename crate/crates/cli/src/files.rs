//! On-disk artifact formats and small I/O helpers.

use std::fs;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tempont::derivation::TimelineDoc;
use tempont::model::{expand_instance_template, load_model_files};
use tempont::sim::TruthDoc;
use tempont::trace::{CollisionReport, RecoveryOutcome, Reject};
use tempont::{ActivityModel, Bindings, InstanceTemplate, ObservationRecord, Timeline, TraceBundle, SCHEMA_VERSION};

/// Which stage wrote an artifact and from what.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub stage: String,
    pub inputs: Vec<String>,
}

impl Provenance {
    pub fn new(stage: &str, inputs: &[&Path]) -> Self {
        Provenance {
            tool: concat!("tempont ", env!("CARGO_PKG_VERSION")).to_string(),
            stage: stage.to_string(),
            inputs: inputs.iter().map(|p| p.display().to_string()).collect(),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RecordsFile {
    pub schema_version: String,
    pub provenance: Provenance,
    pub records: Vec<ObservationRecord>,
    pub rejects: Vec<Reject>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct BundlesFile {
    pub schema_version: String,
    pub provenance: Provenance,
    pub bundles: Vec<TraceBundle>,
    pub collisions: CollisionReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recovery: Option<RecoveryOutcome>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TruthFile {
    pub schema_version: String,
    pub provenance: Provenance,
    pub bindings: Bindings,
    pub traces: Vec<TruthDoc>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeriveFailure {
    pub trace_id: String,
    pub error: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TimelinesFile {
    pub schema_version: String,
    pub provenance: Provenance,
    pub bindings: Bindings,
    pub reduced: bool,
    pub timelines: Vec<TimelineDoc>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failures: Vec<DeriveFailure>,
}

pub fn check_schema(found: &str, path: &Path) -> Result<()> {
    if found != SCHEMA_VERSION {
        bail!("{} has schema_version {found}, expected {SCHEMA_VERSION}", path.display());
    }
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let f = fs::File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    serde_json::from_reader(BufReader::new(f)).with_context(|| format!("cannot parse {}", path.display()))
}

pub fn open(path: &Path) -> Result<BufReader<fs::File>> {
    let f = fs::File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    Ok(BufReader::new(f))
}

/// Where a command's primary artifact goes. Human-readable summaries go to
/// stdout when the artifact is written to a file, to stderr otherwise.
pub struct Sink {
    pub out: Option<PathBuf>,
}

impl Sink {
    pub fn new(out: Option<PathBuf>) -> Self {
        Sink { out }
    }

    pub fn writer(&self) -> Result<Box<dyn Write>> {
        Ok(match &self.out {
            Some(p) => Box::new(create(p)?),
            None => Box::new(BufWriter::new(io::stdout().lock())),
        })
    }

    pub fn json<T: Serialize>(&self, value: &T) -> Result<()> {
        let mut w = self.writer()?;
        serde_json::to_writer_pretty(&mut w, value)?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }

    pub fn say(&self, text: impl AsRef<str>) {
        let text = text.as_ref().trim_end();
        if self.out.is_some() {
            println!("{text}");
        } else {
            eprintln!("{text}");
        }
    }
}

pub fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    let f = fs::File::create(path).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(BufWriter::new(f))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    Sink::new(Some(path.to_path_buf())).json(value)
}

pub fn load_model(paths: &[PathBuf]) -> Result<ActivityModel> {
    if paths.is_empty() {
        bail!("no model file given");
    }
    load_model_files(paths).context("cannot load model")
}

pub fn template(model: &ActivityModel, bindings: &Bindings) -> Result<Arc<InstanceTemplate>> {
    Ok(Arc::new(expand_instance_template(model, bindings).context("cannot expand the model")?))
}

/// Rebuilds timelines from their documents. Reduced documents cover only
/// part of the template; identical coverage shares one restricted template.
pub fn timelines(file: TimelinesFile, full: &Arc<InstanceTemplate>) -> Result<Vec<Timeline>> {
    let mut restricted: Vec<(Vec<bool>, Arc<InstanceTemplate>)> = Vec::new();
    let mut out = Vec::with_capacity(file.timelines.len());
    for doc in file.timelines {
        let tpl = if doc.slots.len() == full.len() {
            full.clone()
        } else {
            let keep: Vec<bool> = full.slots().iter().map(|s| doc.slots.contains_key(&*s.path)).collect();
            match restricted.iter().find(|(k, _)| *k == keep) {
                Some((_, t)) => t.clone(),
                None => {
                    let t = Arc::new(full.restrict(&keep).0);
                    restricted.push((keep, t.clone()));
                    t
                }
            }
        };
        let id = doc.trace_id.clone();
        out.push(Timeline::from_doc(doc, tpl).with_context(|| format!("timeline of trace {id}"))?);
    }
    Ok(out)
}

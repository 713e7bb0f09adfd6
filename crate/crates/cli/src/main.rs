//! `tempont`: model-guided performance analysis from the command line.

mod commands;
mod files;
mod pipeline;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use commands::{Status, WindowSpec};
use tempont::drilldown::{DEFAULT_K, DEFAULT_SHARE};
use tempont::trace::{Format, DEFAULT_PREFIX_LEN, DEFAULT_RECOVERY_WINDOW_US};
use tempont::{Bindings, Micros, DEFAULT_EPSILON_US};

#[derive(Parser)]
#[command(name = "tempont", version, about = "Model-guided performance analysis of distributed traces")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ModelArgs {
    /// Model document(s); imports are followed.
    #[arg(long = "model", required = true)]
    model: Vec<PathBuf>,
    /// Multiplicity bindings, e.g. E=2,V=4.
    #[arg(long, default_value = "")]
    bindings: Bindings,
}

#[derive(Args)]
struct Tolerance {
    /// Equality tolerance in microseconds.
    #[arg(long = "epsilon-us", env = "TEMPONT_EPSILON_US", default_value_t = DEFAULT_EPSILON_US)]
    epsilon_us: Micros,
}

#[derive(Subcommand)]
enum ModelCommand {
    /// Check a model for structural defects.
    Validate { paths: Vec<PathBuf> },
    /// List the activity instances a model expands to.
    Expand {
        paths: Vec<PathBuf>,
        #[arg(long, default_value = "")]
        bindings: Bindings,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum Command {
    #[command(subcommand)]
    Model(ModelCommand),
    /// Which temporal aspects the measured ones make observable.
    Infer {
        paths: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate ground truth and observation records from a model.
    Simulate {
        #[command(flatten)]
        m: ModelArgs,
        /// Simulation config (JSON).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        traces: Option<usize>,
        #[arg(long, default_value = "jsonl")]
        format: Format,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Parse observation records, collecting malformed lines.
    Ingest {
        input: PathBuf,
        #[arg(long, default_value = "jsonl")]
        format: Format,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Group ingested records into per-transaction bundles.
    Correlate {
        input: PathBuf,
        #[arg(long, default_value_t = DEFAULT_PREFIX_LEN)]
        prefix_len: usize,
        /// Assign colliding short-id records by capture-time proximity.
        #[arg(long)]
        recover_collisions: bool,
        #[arg(long, default_value_t = DEFAULT_RECOVERY_WINDOW_US)]
        recovery_window_us: Micros,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare bundles against the records the model expects.
    CheckCompleteness {
        #[command(flatten)]
        m: ModelArgs,
        #[arg(long)]
        bundles: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Derive every reachable aspect of every trace.
    Derive {
        #[command(flatten)]
        m: ModelArgs,
        #[arg(long)]
        bundles: PathBuf,
        /// Keep one replica per fork (slowest under wait-for-all, fastest
        /// under wait-for-any).
        #[arg(long)]
        reduce: bool,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Conformance, causality and (optionally) clock drift checks.
    Check {
        #[command(flatten)]
        m: ModelArgs,
        #[arg(long)]
        timelines: PathBuf,
        #[command(flatten)]
        tol: Tolerance,
        /// Findings as JSON lines.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Mismatch distribution as CSV.
        #[arg(long)]
        distribution: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_EPSILON_US)]
        bucket_us: Micros,
        /// Cross-source drift series as CSV.
        #[arg(long)]
        drift: Option<PathBuf>,
        #[arg(long, default_value_t = 30_000_000)]
        drift_window_us: Micros,
    },
    /// Localize a latency anomaly by walking down the activity tree.
    Drill {
        #[command(flatten)]
        m: ModelArgs,
        #[arg(long)]
        timelines: PathBuf,
        #[arg(long)]
        root: String,
        /// `auto` or START_US:END_US.
        #[arg(long, default_value = "auto")]
        window: WindowSpec,
        #[arg(long, default_value_t = DEFAULT_K)]
        k: f64,
        #[arg(long, default_value_t = DEFAULT_SHARE)]
        share: f64,
        #[command(flatten)]
        tol: Tolerance,
        /// Dump this activity's latency series as CSV to --series-out.
        #[arg(long, requires = "series_out")]
        series: Option<String>,
        #[arg(long)]
        series_out: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every stage from a manifest.
    Pipeline {
        #[arg(long)]
        manifest: PathBuf,
        #[command(flatten)]
        tol: Tolerance,
    },
}

impl Command {
    fn stage(&self) -> &'static str {
        match self {
            Command::Model(ModelCommand::Validate { .. }) => "model validate",
            Command::Model(ModelCommand::Expand { .. }) => "model expand",
            Command::Infer { .. } => "infer",
            Command::Simulate { .. } => "simulate",
            Command::Ingest { .. } => "ingest",
            Command::Correlate { .. } => "correlate",
            Command::CheckCompleteness { .. } => "check-completeness",
            Command::Derive { .. } => "derive",
            Command::Check { .. } => "check",
            Command::Drill { .. } => "drill",
            Command::Pipeline { .. } => "pipeline",
        }
    }
}

pub(crate) fn exit_code(s: Status) -> i32 {
    match s {
        Status::Clean => 0,
        Status::Flagged => 1,
    }
}

fn run(cmd: Command) -> anyhow::Result<Status> {
    match cmd {
        Command::Model(ModelCommand::Validate { paths }) => commands::model_validate(&paths),
        Command::Model(ModelCommand::Expand { paths, bindings, out }) => commands::model_expand(&paths, &bindings, out),
        Command::Infer { paths, out } => commands::infer(&paths, out),
        Command::Simulate {
            m,
            config,
            seed,
            traces,
            format,
            out,
            truth,
        } => commands::simulate(commands::SimulateArgs {
            model: &m.model,
            bindings: &m.bindings,
            config: config.as_deref(),
            seed,
            traces,
            out: &out,
            format,
            truth: truth.as_deref(),
        }),
        Command::Ingest { input, format, out } => commands::ingest_records(&input, format, out),
        Command::Correlate {
            input,
            prefix_len,
            recover_collisions,
            recovery_window_us,
            out,
        } => commands::correlate_records(commands::CorrelateArgs {
            input: &input,
            prefix_len,
            recover: recover_collisions,
            window_us: recovery_window_us,
            out,
        }),
        Command::CheckCompleteness { m, bundles, out } => {
            commands::check_completeness(&m.model, &m.bindings, &bundles, out)
        }
        Command::Derive {
            m,
            bundles,
            reduce,
            jobs,
            out,
        } => commands::derive_timelines(commands::DeriveArgs {
            model: &m.model,
            bindings: &m.bindings,
            bundles: &bundles,
            reduce,
            jobs,
            out,
        }),
        Command::Check {
            m,
            timelines,
            tol,
            out,
            distribution,
            bucket_us,
            drift,
            drift_window_us,
        } => commands::check(commands::CheckArgs {
            model: &m.model,
            bindings: &m.bindings,
            timelines: &timelines,
            epsilon_us: tol.epsilon_us,
            out,
            distribution: distribution.as_deref(),
            bucket_us,
            drift: drift.as_deref(),
            drift_window_us,
        }),
        Command::Drill {
            m,
            timelines,
            root,
            window,
            k,
            share,
            tol,
            series,
            series_out,
            out,
        } => commands::drill_down(commands::DrillArgs {
            model: &m.model,
            bindings: &m.bindings,
            timelines: &timelines,
            root: &root,
            window,
            k,
            share,
            epsilon_us: tol.epsilon_us,
            series: series.as_deref().zip(series_out.as_deref()),
            out,
        }),
        Command::Pipeline { manifest, tol } => pipeline::run(&manifest, tol.epsilon_us),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let stage = cli.command.stage();
    match run(cli.command) {
        Ok(s) => ExitCode::from(exit_code(s) as u8),
        Err(e) => {
            eprintln!("tempont {stage}: error: {e:#}");
            ExitCode::from(2)
        }
    }
}

//! Shared fixtures for the pipeline benchmarks.

use std::sync::Arc;

use tempont::derivation::{derive, DerivationPlan};
use tempont::sim::{simulate, SimConfig, SimOutput};
use tempont::trace::{correlate, Correlation, CorrelationPolicy};
use tempont::{bundled, Bindings, RuleCatalog, Timeline};

/// The spike scenario shipped with the repository.
pub fn spike_config(traces: usize) -> SimConfig {
    let mut cfg = SimConfig::from_json(include_str!("../../../scenarios/spike/sim.json")).expect("bundled scenario");
    cfg.traces = traces;
    cfg
}

pub fn hlf_bindings(e: i64, v: i64) -> Bindings {
    format!("E={e},V={v}").parse().expect("valid bindings")
}

pub struct Fixture {
    pub sim: SimOutput,
    pub corr: Correlation,
    pub plan: DerivationPlan,
}

impl Fixture {
    pub fn new(cfg: &SimConfig, bindings: &Bindings) -> Self {
        let model = bundled::hlf();
        let sim = simulate(&model, bindings, cfg).expect("simulation");
        let corr = correlate(sim.records.clone(), CorrelationPolicy::default());
        let plan = DerivationPlan::new(Arc::clone(&sim.truth.template), &RuleCatalog::standard());
        Fixture { sim, corr, plan }
    }

    pub fn timelines(&self) -> Vec<Timeline> {
        self.corr.bundles.values().map(|b| derive(b, &self.plan).expect("derivable")).collect()
    }
}

//! Named reproductions. Each takes a serializable parameter struct, runs
//! its repetitions in parallel on per-run RNG streams and returns a
//! [`Report`](crate::report::Report).

pub mod lm;
pub mod mixture;
pub mod run;
pub mod sites;
pub mod toy;
pub mod uci;

use std::time::Instant;

use anyhow::Result;
use dmlfed_core::dml::DmlConfig;
use dmlfed_core::federation::{run_federated, FederationOptions, RunReport, SiteNode};
use dmlfed_core::learners::{LearnerConfig, ModelArtifact};
use dmlfed_core::numerics::{Dataset, RngHandle, WeightedDesign};
use rayon::prelude::*;

/// Site nodes named `site01`, `site02`, … so that id order is site order.
pub fn site_nodes(sites: &[Dataset], dml: &DmlConfig, rng: RngHandle) -> Vec<SiteNode> {
    sites
        .iter()
        .enumerate()
        .map(|(s, d)| {
            let id = format!("site{:02}", s + 1);
            let r = rng.fork_str(&id);
            SiteNode::new(id, d.clone(), dml.clone(), r)
        })
        .collect()
}

/// One in-process federated round.
pub fn federate(
    sites: &[Dataset],
    dml: &DmlConfig,
    learner: &LearnerConfig,
    site_rng: RngHandle,
    learner_rng: RngHandle,
) -> Result<(ModelArtifact, RunReport)> {
    let nodes = site_nodes(sites, dml, site_rng);
    let opts = FederationOptions {
        learner_rng,
        ..Default::default()
    };
    Ok(run_federated(&nodes, learner, &opts)?)
}

/// Fits on raw rows with unit weights.
pub fn fit_raw(data: &Dataset, learner: &LearnerConfig, rng: RngHandle) -> Result<ModelArtifact> {
    Ok(dmlfed_core::learners::fit(&WeightedDesign::unit(data), learner, rng)?.0)
}

/// Short label for a learner, e.g. `rf-mtry10`.
pub fn learner_label(cfg: &LearnerConfig) -> String {
    match cfg {
        LearnerConfig::Rf(c) => match c.mtry {
            Some(m) => format!("rf-mtry{m}"),
            None => "rf".into(),
        },
        other => other.name().into(),
    }
}

/// Runs `f` over `jobs` in parallel; results come back in job order.
pub(crate) fn par_map<J: Sync, T: Send>(jobs: &[J], f: impl Fn(&J) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
    jobs.par_iter().map(f).collect()
}

/// Seconds since `t`.
pub(crate) fn secs(t: Instant) -> f64 {
    t.elapsed().as_secs_f64()
}

/// Stream id for a real-valued parameter, so that subsets of a sweep draw
/// the same data as the full sweep.
pub(crate) fn key(v: f64) -> u64 {
    v.to_bits()
}

//! A declarative run: a scenario file plus transform, learner and
//! transport. Each run compares the federated fit against the
//! non-distributed fit on the same data and learner stream.
//!
//! ```toml
//! seed = 1
//! runs = 5
//! transport = "socket"    # optional; in_process by default
//!
//! [generator]
//! kind = "linreg6"
//! rho = 0.1
//!
//! [partition]
//! rule = "equal_random"
//! sites = 1
//!
//! [dml]
//! kind = "kmeans"
//! ratio = 1.0
//!
//! [learner]
//! learner = "lm"
//! ```

use std::path::Path;
use std::time::Instant;

use anyhow::{Context, Result};
use dmlfed_core::dml::DmlConfig;
use dmlfed_core::federation::{run_federated, run_nondistributed, FederationOptions, Transport};
use dmlfed_core::learners::{LearnerConfig, ModelArtifact};
use dmlfed_core::numerics::{Dataset, RngHandle};
use dmlfed_core::scenarios::{Generator, PartitionRule, ScenarioSpec};
use serde::{Deserialize, Serialize};

use super::{par_map, secs, site_nodes};
use crate::metrics::mean_sd;
use crate::report::{num, Report, Table};

fn one() -> usize {
    1
}

fn default_learner() -> LearnerConfig {
    LearnerConfig::Lm
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub runs: usize,
    #[serde(default)]
    pub train: Option<usize>,
    #[serde(default)]
    pub test: Option<usize>,
    #[serde(default)]
    pub transport: Option<Transport>,
    pub generator: Generator,
    pub partition: PartitionRule,
    #[serde(default)]
    pub dml: DmlConfig,
    #[serde(default = "default_learner")]
    pub learner: LearnerConfig,
}

impl RunSpec {
    pub fn from_toml_str(text: &str, base: Option<&Path>) -> Result<Self> {
        let spec: Self = toml::from_str(text).context("run spec")?;
        let mut spec = spec;
        if let Some(base) = base {
            let mut sc = spec.scenario();
            sc.resolve_paths(base);
            spec.generator = sc.generator;
        }
        spec.partition.validate()?;
        Ok(spec)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
        Self::from_toml_str(&text, path.parent())
    }

    pub fn scenario(&self) -> ScenarioSpec {
        ScenarioSpec {
            seed: self.seed,
            train: self.train,
            test: self.test,
            generator: self.generator.clone(),
            partition: self.partition.clone(),
        }
    }
}

/// Max absolute coefficient difference for linear models; otherwise the
/// fraction of `eval` rows on which the predicted labels differ.
fn model_gap(a: &ModelArtifact, b: &ModelArtifact, eval: &Dataset) -> Result<f64> {
    if let (ModelArtifact::Linear(x), ModelArtifact::Linear(y)) = (a, b) {
        return Ok(x.beta().iter().zip(y.beta()).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max));
    }
    let pa = a.predict_labels(eval.features())?;
    let pb = b.predict_labels(eval.features())?;
    Ok(pa.iter().zip(&pb).filter(|(u, v)| u != v).count() as f64 / eval.n().max(1) as f64)
}

struct Record {
    run: usize,
    method: &'static str,
    error: f64,
    error_gap: f64,
    model_gap: f64,
    reps: usize,
    bytes: usize,
    secs: f64,
}

pub fn run(spec: &RunSpec) -> Result<Report> {
    let scenario = spec.scenario();
    let jobs: Vec<usize> = (0..spec.runs).collect();
    let results = par_map(&jobs, |&run| -> Result<Vec<Record>> {
        let sc = scenario.materialize(run as u64)?;
        // the error is measured on the test set when there is one, else on the training rows
        let eval = sc.test.as_ref().filter(|t| t.n() > 0).unwrap_or(&sc.train);
        let r = RngHandle::new(spec.seed).fork(run as u64);
        let t = Instant::now();
        let (base, base_rep) = run_nondistributed(&sc.train, &spec.learner, r.fork(3))?;
        let base_err = base.test_error(eval)?;
        let base_secs = secs(t);
        let t = Instant::now();
        let nodes = site_nodes(&sc.sites, &spec.dml, r.fork(2));
        let opts = FederationOptions {
            transport: spec.transport.unwrap_or(Transport::InProcess),
            learner_rng: r.fork(3),
            ..Default::default()
        };
        let (fed, rep) = run_federated(&nodes, &spec.learner, &opts)?;
        let fed_err = fed.test_error(eval)?;
        Ok(vec![
            Record {
                run,
                method: "nondist",
                error: base_err,
                error_gap: 0.0,
                model_gap: 0.0,
                reps: base_rep.pooled_reps,
                bytes: 0,
                secs: base_secs,
            },
            Record {
                run,
                method: "fed",
                error: fed_err,
                error_gap: fed_err - base_err,
                model_gap: model_gap(&fed, &base, eval)?,
                reps: rep.pooled_reps,
                bytes: rep.bytes_to_coordinator,
                secs: secs(t),
            },
        ])
    })?;

    let mut runs = Table::new(&["run", "method", "error", "error_gap", "model_gap", "reps", "bytes_to_coordinator"]);
    let mut timings = Table::new(&["run", "method", "seconds"]);
    for x in results.iter().flatten() {
        runs.push(vec![
            x.run.to_string(),
            x.method.into(),
            num(x.error),
            num(x.error_gap),
            num(x.model_gap),
            x.reps.to_string(),
            x.bytes.to_string(),
        ]);
        timings.push(vec![x.run.to_string(), x.method.into(), num(x.secs)]);
    }
    let mut summary = Table::new(&["method", "runs", "error", "error_sd", "error_gap", "model_gap", "reps", "bytes_to_coordinator"]);
    for m in ["nondist", "fed"] {
        let by = [("method", m)];
        let (e, sd) = mean_sd(&runs.values("error", &by));
        summary.push(vec![
            m.into(),
            spec.runs.to_string(),
            num(e),
            num(sd),
            num(mean_sd(&runs.values("error_gap", &by)).0),
            num(mean_sd(&runs.values("model_gap", &by)).0),
            num(mean_sd(&runs.values("reps", &by)).0),
            num(mean_sd(&runs.values("bytes_to_coordinator", &by)).0),
        ]);
    }
    Ok(Report {
        name: "run".into(),
        config: toml::to_string(spec)?,
        runs,
        summary,
        timings,
        checks: Vec::new(),
        plots: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const LOSSLESS: &str = r#"
seed = 3
runs = 2
train = 300

[generator]
kind = "linreg6"
rho = 0.3

[partition]
rule = "equal_random"
sites = 1

[dml]
kind = "kmeans"
ratio = 1.0
"#;

    #[test]
    fn lossless_single_site_has_no_gap() {
        let spec = RunSpec::from_toml_str(LOSSLESS, None).unwrap();
        let rep = run(&spec).unwrap();
        for g in rep.runs.values("model_gap", &[("method", "fed")]) {
            assert!(g < 1e-8, "coefficient gap {g}");
        }
        assert_eq!(rep.runs.values("reps", &[("method", "fed")]), vec![300.0, 300.0]);
    }

    #[test]
    fn echoed_config_reproduces_records() {
        let spec = RunSpec::from_toml_str(LOSSLESS, None).unwrap();
        let a = run(&spec).unwrap();
        let again = RunSpec::from_toml_str(&a.config, None).unwrap();
        assert_eq!(again, spec);
        assert_eq!(run(&again).unwrap().runs, a.runs);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunSpec::from_toml_str(&format!("{LOSSLESS}\nbogus = 1\n"), None).is_err());
    }
}

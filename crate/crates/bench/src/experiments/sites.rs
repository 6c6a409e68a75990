//! Site-count sweep (D4) and round-robin class unbalance (D5): federated
//! error against the mean of purely local fits and the pooled raw fit.

use std::time::Instant;

use anyhow::Result;
use dmlfed_core::dml::{DmlConfig, DmlKind};
use dmlfed_core::federation::run_local_average;
use dmlfed_core::learners::{ForestConfig, LearnerConfig};
use dmlfed_core::numerics::{Dataset, RngHandle};
use dmlfed_core::scenarios::{gen_mixture4, partition, PartitionRule};
use serde::{Deserialize, Serialize};

use super::{federate, fit_raw, key, par_map, secs, site_nodes};
use crate::metrics::mean_sd;
use crate::plot::{Chart, Series};
use crate::report::{num, Check, Report, Table};

fn default_forest() -> LearnerConfig {
    LearnerConfig::Rf(ForestConfig::default())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SitesParams {
    pub seed: u64,
    pub runs: usize,
    pub rho: f64,
    pub site_counts: Vec<usize>,
    pub ratios: Vec<f64>,
    pub rows_per_site: usize,
    pub n_test: usize,
    pub transform: DmlKind,
    pub learner: LearnerConfig,
    /// Site counts from which the federated error must beat the local mean.
    pub beat_local_from: usize,
}

impl Default for SitesParams {
    fn default() -> Self {
        Self {
            seed: 0,
            runs: 20,
            rho: 0.1,
            site_counts: vec![2, 3, 4, 6, 8, 10, 20],
            ratios: vec![2.0, 4.0, 8.0],
            rows_per_site: 1600,
            n_test: 1000,
            transform: DmlKind::Kmeans,
            learner: default_forest(),
            beat_local_from: 4,
        }
    }
}

struct Record {
    run: usize,
    key: String,
    method: String,
    ratio: Option<f64>,
    error: f64,
    secs: f64,
}

/// Non-distributed, local-mean and federated errors for one set of sites.
fn compare(
    sites: &[Dataset],
    test: &Dataset,
    ratios: &[f64],
    transform: DmlKind,
    learner: &LearnerConfig,
    r: RngHandle,
) -> Result<Vec<(String, Option<f64>, f64, f64)>> {
    let lrng = r.fork(3);
    let pooled = Dataset::concat(&sites.iter().collect::<Vec<_>>())?;
    let t = Instant::now();
    let base = fit_raw(&pooled, learner, lrng)?.test_error(test)?;
    let mut out = vec![("nondist".to_string(), None, base, secs(t))];
    let t = Instant::now();
    let nodes = site_nodes(sites, &DmlConfig::new(transform, 1.0), r.fork(2));
    let local = run_local_average(&nodes, learner, test, lrng)?.test_error.unwrap_or(f64::NAN);
    out.push(("local".to_string(), None, local, secs(t)));
    for &ratio in ratios {
        let t = Instant::now();
        let (model, _) = federate(sites, &DmlConfig::new(transform, ratio), learner, r.fork(2), lrng)?;
        out.push(("fed".to_string(), Some(ratio), model.test_error(test)?, secs(t)));
    }
    Ok(out)
}

fn tables(results: &[Vec<Record>], key_name: &str) -> (Table, Table) {
    let mut runs = Table::new(&["run", key_name, "method", "ratio", "error"]);
    let mut timings = Table::new(&["run", key_name, "method", "ratio", "seconds"]);
    for x in results.iter().flatten() {
        let ratio = x.ratio.map(num).unwrap_or_default();
        runs.push(vec![x.run.to_string(), x.key.clone(), x.method.clone(), ratio.clone(), num(x.error)]);
        timings.push(vec![x.run.to_string(), x.key.clone(), x.method.clone(), ratio, num(x.secs)]);
    }
    (runs, timings)
}

/// Mean error and mean per-run difference to the non-distributed error.
fn cell(runs: &Table, key_name: &str, key: &str, method: &str, ratio: &str) -> (f64, f64, f64) {
    let by = [(key_name, key), ("method", method), ("ratio", ratio)];
    let errs = runs.values("error", &by);
    let base = runs.values("error", &[(key_name, key), ("method", "nondist"), ("ratio", "")]);
    let diffs: Vec<f64> = errs.iter().zip(&base).map(|(a, b)| a - b).collect();
    let (m, sd) = mean_sd(&errs);
    (m, sd, mean_sd(&diffs).0)
}

fn methods(ratios: &[f64]) -> Vec<(String, String)> {
    let mut v = vec![("nondist".to_string(), String::new()), ("local".to_string(), String::new())];
    v.extend(ratios.iter().map(|r| ("fed".to_string(), num(*r))));
    v
}

pub fn run_sites(p: &SitesParams) -> Result<Report> {
    let max_j = p.site_counts.iter().copied().max().unwrap_or(1);
    let root = RngHandle::new(p.seed);
    let jobs: Vec<usize> = (0..p.runs).collect();
    let results = par_map(&jobs, |&run| -> Result<Vec<Record>> {
        let r = root.fork(key(p.rho)).fork(run as u64);
        // every site count draws its rows from the same pool and test set
        let m = gen_mixture4(max_j * p.rows_per_site, p.n_test, p.rho, r.fork(0))?;
        let mut out = Vec::new();
        for &j in &p.site_counts {
            let rows: Vec<usize> = (0..j * p.rows_per_site).collect();
            let train = m.train.subset(&rows)?;
            let rj = r.fork(1000 + j as u64);
            let sites = partition(&train, &PartitionRule::EqualRandom { sites: j }, rj.fork(1))?;
            for (method, ratio, error, secs) in compare(&sites, &m.test, &p.ratios, p.transform, &p.learner, rj)? {
                out.push(Record {
                    run,
                    key: j.to_string(),
                    method,
                    ratio,
                    error,
                    secs,
                });
            }
        }
        Ok(out)
    })?;
    let (runs, timings) = tables(&results, "sites");
    let mut summary = Table::new(&["sites", "method", "ratio", "error", "error_sd", "diff_vs_nondist"]);
    let mut checks = Vec::new();
    let mut series: Vec<Series> = methods(&p.ratios)
        .iter()
        .skip(1)
        .map(|(m, r)| Series::line(if r.is_empty() { m.clone() } else { format!("{m} {r}:1") }, Vec::new()))
        .collect();
    for &j in &p.site_counts {
        let js = j.to_string();
        for (mi, (method, ratio)) in methods(&p.ratios).iter().enumerate() {
            let (m, sd, diff) = cell(&runs, "sites", &js, method, ratio);
            summary.push(vec![js.clone(), method.clone(), ratio.clone(), num(m), num(sd), num(diff)]);
            if mi > 0 {
                series[mi - 1].points.push((j as f64, diff, 0.0));
            }
        }
    }
    for ratio in &p.ratios {
        let rs = num(*ratio);
        let mut gaps = Vec::new();
        for &j in &p.site_counts {
            let js = j.to_string();
            let (fed, _, gap) = cell(&runs, "sites", &js, "fed", &rs);
            let (local, _, _) = cell(&runs, "sites", &js, "local", "");
            if j >= p.beat_local_from {
                checks.push(Check::new(
                    format!("fed below local J={j} ratio {rs}:1"),
                    fed < local,
                    format!("fed {fed:.4} vs local {local:.4}"),
                ));
            }
            gaps.push((j, gap));
        }
        let monotone = gaps.windows(2).all(|w| w[1].1 <= w[0].1);
        let text: Vec<String> = gaps.iter().map(|(j, g)| format!("J={j}: {g:+.4}")).collect();
        checks.push(Check::new(
            format!("gap non-increasing ratio {rs}:1"),
            monotone,
            text.join(", "),
        ));
    }
    let chart = Chart {
        title: format!("Error relative to non-distributed, rho = {}", p.rho),
        x_label: "number of sites".into(),
        y_label: "test error minus non-distributed".into(),
        series,
        ..Default::default()
    };
    Ok(Report {
        name: "fig_sites".into(),
        config: toml::to_string(p)?,
        runs,
        summary,
        timings,
        checks,
        plots: vec![(String::new(), chart.render())],
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UnbalanceParams {
    pub seed: u64,
    pub runs: usize,
    pub rho: f64,
    pub gammas: Vec<f64>,
    pub sites: usize,
    pub rows_per_site: usize,
    pub n_test: usize,
    pub ratios: Vec<f64>,
    pub transform: DmlKind,
    pub learner: LearnerConfig,
    /// Required margin of the local mean error over the federated error.
    pub min_margin: f64,
}

impl Default for UnbalanceParams {
    fn default() -> Self {
        Self {
            seed: 0,
            runs: 20,
            rho: 0.1,
            gammas: vec![0.1, 0.25, 0.5],
            sites: 4,
            rows_per_site: 1600,
            n_test: 1000,
            ratios: vec![2.0, 4.0, 8.0],
            transform: DmlKind::Kmeans,
            learner: default_forest(),
            min_margin: 0.02,
        }
    }
}

pub fn run_unbalance(p: &UnbalanceParams) -> Result<Report> {
    let root = RngHandle::new(p.seed);
    let jobs: Vec<(f64, usize)> = p.gammas.iter().flat_map(|&g| (0..p.runs).map(move |r| (g, r))).collect();
    let results = par_map(&jobs, |&(gamma, run)| -> Result<Vec<Record>> {
        let r = root.fork(key(p.rho)).fork(run as u64);
        // the same rows for every gamma; only the downsampling differs
        let m = gen_mixture4(p.sites * p.rows_per_site, p.n_test, p.rho, r.fork(0))?;
        let rg = r.fork(key(gamma));
        let rule = PartitionRule::RoundRobinUnbalance { sites: p.sites, gamma };
        let sites = partition(&m.train, &rule, rg.fork(1))?;
        Ok(compare(&sites, &m.test, &p.ratios, p.transform, &p.learner, rg)?
            .into_iter()
            .map(|(method, ratio, error, secs)| Record {
                run,
                key: num(gamma),
                method,
                ratio,
                error,
                secs,
            })
            .collect())
    })?;
    let (runs, timings) = tables(&results, "gamma");
    let mut summary = Table::new(&["gamma", "method", "ratio", "error", "error_sd", "diff_vs_nondist"]);
    let mut checks = Vec::new();
    let mut series: Vec<Series> = methods(&p.ratios)
        .iter()
        .skip(1)
        .map(|(m, r)| Series::line(if r.is_empty() { m.clone() } else { format!("{m} {r}:1") }, Vec::new()))
        .collect();
    for &g in &p.gammas {
        let gs = num(g);
        for (mi, (method, ratio)) in methods(&p.ratios).iter().enumerate() {
            let (m, sd, diff) = cell(&runs, "gamma", &gs, method, ratio);
            summary.push(vec![gs.clone(), method.clone(), ratio.clone(), num(m), num(sd), num(diff)]);
            if mi > 0 {
                series[mi - 1].points.push((g, diff, 0.0));
            }
        }
        let (local, _, _) = cell(&runs, "gamma", &gs, "local", "");
        for ratio in &p.ratios {
            let rs = num(*ratio);
            let (fed, _, _) = cell(&runs, "gamma", &gs, "fed", &rs);
            checks.push(Check::new(
                format!("fed beats local gamma={gs} ratio {rs}:1"),
                local - fed >= p.min_margin,
                format!("local {local:.4} − fed {fed:.4} = {:.4} (need ≥ {})", local - fed, p.min_margin),
            ));
        }
    }
    let chart = Chart {
        title: format!("Class unbalance across {} sites, rho = {}", p.sites, p.rho),
        x_label: "gamma".into(),
        y_label: "test error minus non-distributed".into(),
        series,
        ..Default::default()
    };
    Ok(Report {
        name: "fig_unbalance".into(),
        config: toml::to_string(p)?,
        runs,
        summary,
        timings,
        checks,
        plots: vec![(String::new(), chart.render())],
    })
}

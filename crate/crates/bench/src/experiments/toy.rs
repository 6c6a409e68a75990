//! The one-feature toy line split into three sites by x range.

use std::time::Instant;

use anyhow::Result;
use dmlfed_core::dml::{DmlConfig, DmlKind};
use dmlfed_core::learners::{LearnerConfig, ModelArtifact};
use dmlfed_core::numerics::RngHandle;
use dmlfed_core::scenarios::{gen_toy_range, TOY_NOISE_VAR, TOY_X_MAX};
use serde::{Deserialize, Serialize};

use super::{federate, fit_raw, par_map, secs};
use crate::metrics::mean_sd;
use crate::plot::{Chart, Series};
use crate::report::{num, Check, Report, Table};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToyParams {
    pub seed: u64,
    pub runs: usize,
    pub n: usize,
    pub x_max: f64,
    pub ratio: f64,
    pub transforms: Vec<DmlKind>,
    /// Points of the first run drawn in the scatter plot.
    pub plot_points: usize,
}

impl Default for ToyParams {
    fn default() -> Self {
        Self {
            seed: 0,
            runs: 20,
            n: 3000,
            x_max: TOY_X_MAX,
            ratio: 10.0,
            transforms: vec![DmlKind::Kmeans, DmlKind::Rptree],
            plot_points: 600,
        }
    }
}

const TRUTH: [f64; 2] = [20.0, 2.0];

fn line(model: &ModelArtifact) -> [f64; 2] {
    match model {
        ModelArtifact::Linear(m) => {
            let b = m.beta();
            [b[0], b[1]]
        }
        _ => unreachable!("toy fits are linear"),
    }
}

struct Record {
    run: usize,
    method: String,
    coef: [f64; 2],
    secs: f64,
}

pub fn run(p: &ToyParams) -> Result<Report> {
    let root = RngHandle::new(p.seed);
    let jobs: Vec<usize> = (0..p.runs).collect();
    let results = par_map(&jobs, |&run| -> Result<(Vec<Record>, Vec<(f64, f64)>)> {
        let r = root.fork(run as u64);
        let toy = gen_toy_range(p.n, p.x_max, r.fork(0))?;
        let rec = |method: String, model: &ModelArtifact, t: Instant| Record {
            run,
            method,
            coef: line(model),
            secs: secs(t),
        };
        let t = Instant::now();
        let mut out = vec![rec("full".into(), &fit_raw(&toy.data, &LearnerConfig::Lm, r.fork(3))?, t)];
        for (s, site) in toy.sites.iter().enumerate() {
            let t = Instant::now();
            out.push(rec(format!("site{}", s + 1), &fit_raw(site, &LearnerConfig::Lm, r.fork(3))?, t));
        }
        for &kind in &p.transforms {
            let t = Instant::now();
            let (model, _) = federate(&toy.sites, &DmlConfig::new(kind, p.ratio), &LearnerConfig::Lm, r.fork(2), r.fork(3))?;
            out.push(rec(format!("fed-{kind}"), &model, t));
        }
        let x = toy.data.features().column(0);
        let y = toy.data.targets().expect("regression").to_vec();
        let step = (toy.data.n() / p.plot_points.max(1)).max(1);
        let pts = x.into_iter().zip(y).step_by(step).collect();
        Ok((out, if run == 0 { pts } else { Vec::new() }))
    })?;

    let mut runs = Table::new(&["run", "method", "intercept", "slope"]);
    let mut timings = Table::new(&["run", "method", "seconds"]);
    for x in results.iter().flat_map(|(r, _)| r) {
        runs.push(vec![x.run.to_string(), x.method.clone(), num(x.coef[0]), num(x.coef[1])]);
        timings.push(vec![x.run.to_string(), x.method.clone(), num(x.secs)]);
    }
    let mut methods = vec!["full".to_string(), "site1".into(), "site2".into(), "site3".into()];
    methods.extend(p.transforms.iter().map(|k| format!("fed-{k}")));

    let mut summary = Table::new(&["method", "intercept", "intercept_sd", "slope", "slope_sd", "slope_bias"]);
    let mut stats = Vec::new();
    for m in &methods {
        let (a, a_sd) = mean_sd(&runs.values("intercept", &[("method", m)]));
        let (b, b_sd) = mean_sd(&runs.values("slope", &[("method", m)]));
        summary.push(vec![m.clone(), num(a), num(a_sd), num(b), num(b_sd), num(b - TRUTH[1])]);
        stats.push((a, b, b_sd));
    }

    // analytic slope standard error of one full fit: σ / (√n · sd(x)), x ~ U(0, x_max)
    let se = (TOY_NOISE_VAR / p.n as f64).sqrt() / (p.x_max / 12f64.sqrt());
    let band = 3.0 * se / (p.runs as f64).sqrt();
    let full = stats[0];
    let mut checks = vec![Check::new(
        "full-data slope",
        (full.1 - TRUTH[1]).abs() <= band,
        format!("mean slope {:.5} vs 2 (3 SE of the mean {band:.5})", full.1),
    )];
    if p.runs > 1 {
        checks.push(Check::new(
            "site 1 slope noisier than full",
            stats[1].2 > full.2,
            format!("run-to-run sd {:.5} vs {:.5}", stats[1].2, full.2),
        ));
    }
    for (i, m) in methods.iter().enumerate().skip(4) {
        let worst = (1..4).map(|s| (stats[s].1 - full.1).abs()).fold(0.0, f64::max);
        let gap = (stats[i].1 - full.1).abs();
        checks.push(Check::new(
            format!("{m} tracks the full line"),
            gap < worst,
            format!("slope gap {gap:.5}, worst single site {worst:.5}"),
        ));
    }

    let scatter = results.first().map(|(_, pts)| pts.clone()).unwrap_or_default();
    let mut series = vec![Series::scatter("data (run 0)", scatter)];
    for (m, (a, b, _)) in methods.iter().zip(&stats) {
        series.push(Series::line(m.clone(), vec![(0.0, *a, 0.0), (p.x_max, a + b * p.x_max, 0.0)]));
    }
    let chart = Chart {
        title: "Toy line: full, per-site and federated fits".into(),
        x_label: "x".into(),
        y_label: "y".into(),
        series,
        ..Default::default()
    };
    Ok(Report {
        name: "toy".into(),
        config: toml::to_string(p)?,
        runs,
        summary,
        timings,
        checks,
        plots: vec![(String::new(), chart.render())],
    })
}

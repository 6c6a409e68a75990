//! Linear regression on six correlated Gaussian features, two sites.

use std::time::Instant;

use anyhow::Result;
use dmlfed_core::dml::{DmlConfig, DmlKind};
use dmlfed_core::learners::{LearnerConfig, ModelArtifact};
use dmlfed_core::numerics::RngHandle;
use dmlfed_core::scenarios::{gen_linreg6, partition, PartitionRule, LINREG6_BETA};
use serde::{Deserialize, Serialize};

use super::{federate, fit_raw, key, par_map, secs};
use crate::metrics::{mean_sd, sq_err};
use crate::plot::{Chart, Series};
use crate::report::{num, Check, Report, Table};

/// I: split on `x₁ < 2`; II: 40% / 60% at random.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LmSetting {
    I,
    II,
}

impl LmSetting {
    pub fn rule(self) -> PartitionRule {
        match self {
            Self::I => PartitionRule::linreg_setting_one(),
            Self::II => PartitionRule::linreg_setting_two(),
        }
    }

    fn name(self) -> &'static str {
        match self {
            Self::I => "I",
            Self::II => "II",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LmParams {
    pub seed: u64,
    pub runs: usize,
    pub n: usize,
    pub rhos: Vec<f64>,
    pub settings: Vec<LmSetting>,
    pub ratio: f64,
    pub transforms: Vec<DmlKind>,
    /// Distributed MSE may exceed the non-distributed MSE by this factor.
    pub mse_factor: f64,
    /// Expected band of the non-distributed MSE.
    pub mse_band: (f64, f64),
}

impl Default for LmParams {
    fn default() -> Self {
        Self {
            seed: 0,
            runs: 20,
            n: 40000,
            rhos: vec![0.1, 0.3, 0.6],
            settings: vec![LmSetting::I, LmSetting::II],
            ratio: 40.0,
            transforms: vec![DmlKind::Kmeans, DmlKind::Kdtree, DmlKind::Rptree],
            mse_factor: 3.0,
            mse_band: (1e-4, 1e-3),
        }
    }
}

const COEFS: [&str; 7] = ["b0", "b1", "b2", "b3", "b4", "b5", "b6"];

fn beta(model: &ModelArtifact) -> Vec<f64> {
    match model {
        ModelArtifact::Linear(m) => m.beta(),
        _ => unreachable!("lm fits are linear"),
    }
}

struct Record {
    rho: f64,
    setting: LmSetting,
    method: String,
    run: usize,
    beta: Vec<f64>,
    bytes: usize,
    secs: f64,
}

pub fn run(p: &LmParams) -> Result<Report> {
    let mut jobs = Vec::new();
    for &rho in &p.rhos {
        for &setting in &p.settings {
            for run in 0..p.runs {
                jobs.push((rho, setting, run));
            }
        }
    }
    let root = RngHandle::new(p.seed);
    let results = par_map(&jobs, |&(rho, setting, run)| -> Result<Vec<Record>> {
        let r = root.fork(key(rho)).fork(setting as u64).fork(run as u64);
        let data = gen_linreg6(p.n, rho, r.fork(0))?;
        let t = Instant::now();
        let base = fit_raw(&data, &LearnerConfig::Lm, r.fork(3))?;
        let mut out = vec![Record {
            rho,
            setting,
            method: "nondist".into(),
            run,
            beta: beta(&base),
            bytes: 0,
            secs: secs(t),
        }];
        let sites = partition(&data, &setting.rule(), r.fork(1))?;
        for &kind in &p.transforms {
            let t = Instant::now();
            let (model, report) = federate(&sites, &DmlConfig::new(kind, p.ratio), &LearnerConfig::Lm, r.fork(2), r.fork(3))?;
            out.push(Record {
                rho,
                setting,
                method: kind.to_string(),
                run,
                beta: beta(&model),
                bytes: report.bytes_to_coordinator,
                secs: secs(t),
            });
        }
        Ok(out)
    })?;

    let mut cols = vec!["rho", "setting", "method", "run"];
    cols.extend(COEFS);
    cols.extend(["sq_err", "bytes_to_coordinator"]);
    let mut runs = Table::new(&cols);
    let mut timings = Table::new(&["rho", "setting", "method", "run", "seconds"]);
    for rec in results.iter().flatten() {
        let mut row = vec![num(rec.rho), rec.setting.name().into(), rec.method.clone(), rec.run.to_string()];
        row.extend(rec.beta.iter().map(|v| num(*v)));
        row.push(num(sq_err(&rec.beta, &LINREG6_BETA)));
        row.push(rec.bytes.to_string());
        runs.push(row);
        timings.push(vec![
            num(rec.rho),
            rec.setting.name().into(),
            rec.method.clone(),
            rec.run.to_string(),
            num(rec.secs),
        ]);
    }

    let mut cols = vec!["rho", "setting", "method", "runs"];
    cols.extend(COEFS);
    cols.extend(["mse", "mse_sd", "mse_ratio"]);
    let mut summary = Table::new(&cols);
    let mut checks = Vec::new();
    let methods: Vec<String> = std::iter::once("nondist".to_string())
        .chain(p.transforms.iter().map(|k| k.to_string()))
        .collect();
    let mut series: Vec<Series> = Vec::new();
    for &setting in &p.settings {
        for m in &methods {
            series.push(Series::line(format!("{m} ({})", setting.name()), Vec::new()));
        }
    }
    for &rho in &p.rhos {
        for (si, &setting) in p.settings.iter().enumerate() {
            let rho_s = num(rho);
            let mut base_mse = f64::NAN;
            for (mi, m) in methods.iter().enumerate() {
                let by = [("rho", rho_s.as_str()), ("setting", setting.name()), ("method", m.as_str())];
                let errs = runs.values("sq_err", &by);
                let (mse, sd) = mean_sd(&errs);
                if mi == 0 {
                    base_mse = mse;
                }
                let mut row = vec![rho_s.clone(), setting.name().into(), m.clone(), errs.len().to_string()];
                for c in COEFS {
                    row.push(num(mean_sd(&runs.values(c, &by)).0));
                }
                row.extend([num(mse), num(sd), num(mse / base_mse)]);
                summary.push(row);
                series[si * methods.len() + mi].points.push((rho, mse, 0.0));
                if mi == 0 {
                    let (lo, hi) = p.mse_band;
                    checks.push(Check::new(
                        format!("nondist MSE band rho={rho} setting {}", setting.name()),
                        (lo..=hi).contains(&mse),
                        format!("MSE {mse:.4e} in [{lo:e}, {hi:e}]"),
                    ));
                } else {
                    checks.push(Check::new(
                        format!("{m} MSE rho={rho} setting {}", setting.name()),
                        mse <= p.mse_factor * base_mse,
                        format!("MSE {mse:.4e} vs nondist {base_mse:.4e} (ratio {:.3}, limit {})", mse / base_mse, p.mse_factor),
                    ));
                }
            }
        }
    }
    let chart = Chart {
        title: format!("Coefficient MSE, {}:1 compression", p.ratio),
        x_label: "rho".into(),
        y_label: "MSE".into(),
        log_y: true,
        series,
        ..Default::default()
    };
    Ok(Report {
        name: "table_lm".into(),
        config: toml::to_string(p)?,
        runs,
        summary,
        timings,
        checks,
        plots: vec![(String::new(), chart.render())],
    })
}

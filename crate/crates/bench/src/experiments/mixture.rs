//! Four-component Gaussian mixture classification over the D1–D3 layouts.

use std::time::Instant;

use anyhow::Result;
use dmlfed_core::dml::{DmlConfig, DmlKind};
use dmlfed_core::learners::{ForestConfig, L1Config, LearnerConfig};
use dmlfed_core::numerics::RngHandle;
use dmlfed_core::scenarios::{gen_mixture4, partition, PartitionRule, Setting};
use serde::{Deserialize, Serialize};

use super::{federate, fit_raw, key, learner_label, par_map, secs};
use crate::metrics::{accuracy, mean_sd};
use crate::plot::{Chart, Series};
use crate::report::{num, Check, Report, Table};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MixtureParams {
    pub seed: u64,
    pub runs: usize,
    pub rhos: Vec<f64>,
    pub n_train: usize,
    pub n_test: usize,
    pub ratio: f64,
    pub settings: Vec<Setting>,
    pub transforms: Vec<DmlKind>,
    pub learners: Vec<LearnerConfig>,
    /// Largest accepted |non-distributed − distributed| accuracy.
    pub max_gap: f64,
}

impl Default for MixtureParams {
    fn default() -> Self {
        Self {
            seed: 0,
            runs: 20,
            rhos: vec![0.1, 0.3, 0.6],
            n_train: 4000,
            n_test: 1000,
            ratio: 4.0,
            settings: vec![Setting::D1, Setting::D2, Setting::D3],
            transforms: vec![DmlKind::Kmeans, DmlKind::Rptree],
            learners: vec![LearnerConfig::L1logit(L1Config::default())],
            max_gap: 0.03,
        }
    }
}

impl MixtureParams {
    pub fn logit() -> Self {
        Self::default()
    }

    /// 100 trees with `mtry` of ⌊√d⌋ and ⌊2√d⌋ for d = 100.
    pub fn forest() -> Self {
        Self {
            learners: [10, 20]
                .into_iter()
                .map(|m| {
                    LearnerConfig::Rf(ForestConfig {
                        trees: 100,
                        mtry: Some(m),
                    })
                })
                .collect(),
            ..Self::default()
        }
    }
}

struct Record {
    rho: f64,
    run: usize,
    learner: String,
    setting: String,
    transform: String,
    accuracy: f64,
    secs: f64,
}

pub fn run(name: &str, p: &MixtureParams) -> Result<Report> {
    let jobs: Vec<(f64, usize)> = p.rhos.iter().flat_map(|&rho| (0..p.runs).map(move |r| (rho, r))).collect();
    let root = RngHandle::new(p.seed);
    let results = par_map(&jobs, |&(rho, run)| -> Result<Vec<Record>> {
        let r = root.fork(key(rho)).fork(run as u64);
        let m = gen_mixture4(p.n_train, p.n_test, rho, r.fork(0))?;
        let rec = |learner: &str, setting: &str, transform: &str, accuracy: f64, secs: f64| Record {
            rho,
            run,
            learner: learner.into(),
            setting: setting.into(),
            transform: transform.into(),
            accuracy,
            secs,
        };
        let mut out = vec![rec("bayes", "nondist", "none", m.bayes_classifier()?.accuracy(&m.test), 0.0)];
        let site_sets = p
            .settings
            .iter()
            .map(|&s| partition(&m.train, &PartitionRule::mixture(s), r.fork(1).fork(s as u64)))
            .collect::<Result<Vec<_>, _>>()?;
        for learner in &p.learners {
            let label = learner_label(learner);
            let lrng = r.fork(3).fork_str(&label);
            let t = Instant::now();
            let base = fit_raw(&m.train, learner, lrng)?;
            out.push(rec(&label, "nondist", "none", accuracy(&base, &m.test)?, secs(t)));
            for (setting, sites) in p.settings.iter().zip(&site_sets) {
                for &kind in &p.transforms {
                    let t = Instant::now();
                    let (model, _) = federate(sites, &DmlConfig::new(kind, p.ratio), learner, r.fork(2), lrng)?;
                    out.push(rec(&label, &setting.to_string(), &kind.to_string(), accuracy(&model, &m.test)?, secs(t)));
                }
            }
        }
        Ok(out)
    })?;

    let mut runs = Table::new(&["rho", "run", "learner", "setting", "transform", "accuracy"]);
    let mut timings = Table::new(&["rho", "run", "learner", "setting", "transform", "seconds"]);
    for x in results.iter().flatten() {
        let head = vec![num(x.rho), x.run.to_string(), x.learner.clone(), x.setting.clone(), x.transform.clone()];
        runs.push([head.clone(), vec![num(x.accuracy)]].concat());
        timings.push([head, vec![num(x.secs)]].concat());
    }

    let mut summary = Table::new(&[
        "rho",
        "learner",
        "setting",
        "transform",
        "accuracy",
        "accuracy_sd",
        "nondist_accuracy",
        "gap",
    ]);
    let mut checks = Vec::new();
    let mut series = Vec::new();
    for &rho in &p.rhos {
        let rs = num(rho);
        let (bayes, bayes_sd) = mean_sd(&runs.values("accuracy", &[("rho", &rs), ("learner", "bayes")]));
        summary.push(vec![
            rs.clone(),
            "bayes".into(),
            "nondist".into(),
            "none".into(),
            num(bayes),
            num(bayes_sd),
            num(bayes),
            num(0.0),
        ]);
        for learner in &p.learners {
            let label = learner_label(learner);
            let base_runs = runs.values("accuracy", &[("rho", &rs), ("learner", &label), ("setting", "nondist")]);
            let (base, base_sd) = mean_sd(&base_runs);
            summary.push(vec![
                rs.clone(),
                label.clone(),
                "nondist".into(),
                "none".into(),
                num(base),
                num(base_sd),
                num(base),
                num(0.0),
            ]);
            for setting in &p.settings {
                let st = setting.to_string();
                for kind in &p.transforms {
                    let ks = kind.to_string();
                    let acc = runs.values(
                        "accuracy",
                        &[("rho", &rs), ("learner", &label), ("setting", &st), ("transform", &ks)],
                    );
                    let (mean, sd) = mean_sd(&acc);
                    let gap = base - mean;
                    summary.push(vec![
                        rs.clone(),
                        label.clone(),
                        st.clone(),
                        ks.clone(),
                        num(mean),
                        num(sd),
                        num(base),
                        num(gap),
                    ]);
                    checks.push(Check::new(
                        format!("{label} {st} {ks} rho={rho}"),
                        gap.abs() <= p.max_gap,
                        format!("accuracy {mean:.4} vs nondist {base:.4} (gap {gap:+.4}, limit {})", p.max_gap),
                    ));
                }
            }
        }
    }
    for learner in &p.learners {
        let label = learner_label(learner);
        let mut setting_names = vec!["nondist".to_string()];
        setting_names.extend(p.settings.iter().map(|s| s.to_string()));
        for kind in std::iter::once("none".to_string()).chain(p.transforms.iter().map(|k| k.to_string())) {
            for st in &setting_names {
                if (st == "nondist") != (kind == "none") {
                    continue;
                }
                let pts = p
                    .rhos
                    .iter()
                    .map(|&rho| {
                        let rs = num(rho);
                        let (m, sd) = mean_sd(&runs.values(
                            "accuracy",
                            &[("rho", &rs), ("learner", &label), ("setting", st), ("transform", &kind)],
                        ));
                        (rho, m, sd)
                    })
                    .collect();
                let name = if kind == "none" { format!("{label} nondist") } else { format!("{label} {st} {kind}") };
                series.push(Series::line(name, pts));
            }
        }
    }
    let chart = Chart {
        title: format!("Test accuracy, {}:1 compression", p.ratio),
        x_label: "rho".into(),
        y_label: "accuracy".into(),
        series,
        ..Default::default()
    };
    Ok(Report {
        name: name.into(),
        config: toml::to_string(p)?,
        runs,
        summary,
        timings,
        checks,
        plots: vec![(String::new(), chart.render())],
    })
}

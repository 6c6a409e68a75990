//! UCI benchmarks from user-supplied files. Each data set `name` is read
//! from `<data_dir>/<name>.csv` with schema `<data_dir>/<name>.toml`;
//! data sets whose files are absent are skipped.

use std::path::PathBuf;
use std::time::Instant;

use anyhow::{ensure, Context, Result};
use dmlfed_core::dml::{DmlConfig, DmlKind};
use dmlfed_core::learners::{ForestConfig, LearnerConfig};
use dmlfed_core::numerics::{load_csv, CsvSchema, Dataset, RngHandle};
use dmlfed_core::scenarios::{partition, train_test_split, Setting, UciPreset, UCI_PRESETS};
use serde::{Deserialize, Serialize};

use super::{federate, fit_raw, learner_label, par_map, secs};
use crate::metrics::{accuracy, mean_sd};
use crate::report::{num, Check, Report, Table};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UciParams {
    pub seed: u64,
    pub runs: usize,
    pub data_dir: PathBuf,
    pub datasets: Vec<String>,
    pub ratio: f64,
    pub settings: Vec<Setting>,
    pub transforms: Vec<DmlKind>,
    pub learners: Vec<LearnerConfig>,
    /// Largest accepted |non-distributed − distributed| accuracy.
    pub max_gap: f64,
    /// Expected non-distributed forest accuracy on thyroid; reported only.
    pub thyroid_min: f64,
}

impl Default for UciParams {
    fn default() -> Self {
        Self {
            seed: 0,
            runs: 10,
            data_dir: PathBuf::from("data/uci"),
            datasets: UCI_PRESETS.iter().map(|p| p.name.to_string()).collect(),
            ratio: 4.0,
            settings: vec![Setting::D1, Setting::D2, Setting::D3],
            transforms: vec![DmlKind::Kmeans, DmlKind::Rptree],
            learners: vec![LearnerConfig::Rf(ForestConfig::default())],
            max_gap: 0.02,
            thyroid_min: 0.98,
        }
    }
}

impl UciParams {
    /// Data sets whose CSV and schema both exist.
    pub fn available(&self) -> Vec<String> {
        self.datasets
            .iter()
            .filter(|n| self.csv_path(n).is_file() && self.schema_path(n).is_file())
            .cloned()
            .collect()
    }

    fn csv_path(&self, name: &str) -> PathBuf {
        self.data_dir.join(format!("{name}.csv"))
    }

    fn schema_path(&self, name: &str) -> PathBuf {
        self.data_dir.join(format!("{name}.toml"))
    }

    fn load(&self, name: &str) -> Result<(&'static UciPreset, Dataset)> {
        let preset = UciPreset::find(name).with_context(|| format!("unknown UCI data set '{name}'"))?;
        let schema = CsvSchema::from_file(&self.schema_path(name))?;
        let (data, _) = load_csv(&self.csv_path(name), &schema)?;
        ensure!(
            data.n_classes() == Some(preset.n_classes),
            "{name}: expected {} classes, found {:?}",
            preset.n_classes,
            data.n_classes()
        );
        Ok((preset, data))
    }
}

struct Record {
    dataset: String,
    run: usize,
    learner: String,
    setting: String,
    transform: String,
    accuracy: f64,
    secs: f64,
}

pub fn run(p: &UciParams) -> Result<Report> {
    let names = p.available();
    let loaded = names.iter().map(|n| p.load(n)).collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(usize, usize)> = (0..loaded.len()).flat_map(|d| (0..p.runs).map(move |r| (d, r))).collect();
    let root = RngHandle::new(p.seed);
    let results = par_map(&jobs, |&(d, run)| -> Result<Vec<Record>> {
        let (preset, data) = &loaded[d];
        let r = root.fork_str(preset.name).fork(run as u64);
        let (train, test) = train_test_split(data, preset.train_fraction, r.fork(0))?;
        let rec = |learner: &str, setting: &str, transform: &str, accuracy: f64, secs: f64| Record {
            dataset: preset.name.into(),
            run,
            learner: learner.into(),
            setting: setting.into(),
            transform: transform.into(),
            accuracy,
            secs,
        };
        let site_sets = p
            .settings
            .iter()
            .map(|&s| partition(&train, &preset.rule(s), r.fork(1).fork(s as u64)))
            .collect::<Result<Vec<_>, _>>()?;
        let mut out = Vec::new();
        for learner in &p.learners {
            let label = learner_label(learner);
            let lrng = r.fork(3).fork_str(&label);
            let t = Instant::now();
            let base = fit_raw(&train, learner, lrng)?;
            out.push(rec(&label, "nondist", "none", accuracy(&base, &test)?, secs(t)));
            for (setting, sites) in p.settings.iter().zip(&site_sets) {
                for &kind in &p.transforms {
                    let t = Instant::now();
                    let (model, _) = federate(sites, &DmlConfig::new(kind, p.ratio), learner, r.fork(2), lrng)?;
                    out.push(rec(&label, &setting.to_string(), &kind.to_string(), accuracy(&model, &test)?, secs(t)));
                }
            }
        }
        Ok(out)
    })?;

    let mut runs = Table::new(&["dataset", "run", "learner", "setting", "transform", "accuracy"]);
    let mut timings = Table::new(&["dataset", "run", "learner", "setting", "transform", "seconds"]);
    for x in results.iter().flatten() {
        let head = vec![x.dataset.clone(), x.run.to_string(), x.learner.clone(), x.setting.clone(), x.transform.clone()];
        runs.push([head.clone(), vec![num(x.accuracy)]].concat());
        timings.push([head, vec![num(x.secs)]].concat());
    }
    let mut summary = Table::new(&["dataset", "learner", "setting", "transform", "accuracy", "accuracy_sd", "gap"]);
    let mut checks = Vec::new();
    for (preset, _) in &loaded {
        let ds = preset.name;
        for learner in &p.learners {
            let label = learner_label(learner);
            let (base, base_sd) =
                mean_sd(&runs.values("accuracy", &[("dataset", ds), ("learner", &label), ("setting", "nondist")]));
            summary.push(vec![
                ds.into(),
                label.clone(),
                "nondist".into(),
                "none".into(),
                num(base),
                num(base_sd),
                num(0.0),
            ]);
            if ds == "thyroid" && matches!(learner, LearnerConfig::Rf(_)) {
                checks.push(Check::soft(
                    format!("{ds} {label} nondist accuracy"),
                    base >= p.thyroid_min,
                    format!("accuracy {base:.4} (expected ≥ {})", p.thyroid_min),
                ));
            }
            for setting in &p.settings {
                let st = setting.to_string();
                for kind in &p.transforms {
                    let ks = kind.to_string();
                    let by = [("dataset", ds), ("learner", &label), ("setting", &st), ("transform", &ks)];
                    let (mean, sd) = mean_sd(&runs.values("accuracy", &by));
                    let gap = base - mean;
                    summary.push(vec![ds.into(), label.clone(), st.clone(), ks.clone(), num(mean), num(sd), num(gap)]);
                    checks.push(Check::new(
                        format!("{ds} {label} {st} {ks}"),
                        gap.abs() <= p.max_gap,
                        format!("accuracy {mean:.4} vs nondist {base:.4} (gap {gap:+.4}, limit {})", p.max_gap),
                    ));
                }
            }
        }
    }
    Ok(Report {
        name: "table_uci".into(),
        config: toml::to_string(p)?,
        runs,
        summary,
        timings,
        checks,
        plots: Vec::new(),
    })
}

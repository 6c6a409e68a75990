//! Synthetic generators, site partitions and declarative scenario files.
//!
//! A scenario file is TOML:
//!
//! ```toml
//! seed = 7
//! train = 40000          # optional; generator default otherwise
//! test = 0
//!
//! [generator]
//! kind = "linreg6"       # toy | linreg6 | mixture4 | csv
//! rho = 0.1
//!
//! [partition]
//! rule = "by_feature_range"
//! feature = 0
//! cuts = [2.0]
//! ```
//!
//! A `csv` generator takes `path`, `schema` (a schema file path or an inline
//! table, see [`crate::numerics::CsvSchema`]) and `train_fraction`. Relative
//! paths resolve against the scenario file's directory.

mod generators;
mod partition;

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{load_csv, CsvSchema, Dataset, NumericsError, RngHandle};

pub use generators::{
    ar1_covariance, cholesky, cholesky_solve, gen_linreg6, gen_mixture4, gen_mixture4_dim, gen_toy, gen_toy_range,
    BayesClassifier, Mixture4, Toy, LINREG6_BETA, LINREG6_MEAN, MIXTURE_DIM, TOY_CUTS, TOY_NOISE_VAR, TOY_X_MAX,
};
pub use partition::{partition, partition_indices, PartitionRule, Setting, Share};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("partition does not fit the data: {0}")]
    RuleMismatch(String),
    #[error("scenario file: {0}")]
    Config(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SchemaRef {
    Inline(CsvSchema),
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Generator {
    Toy {
        #[serde(default = "default_x_max")]
        x_max: f64,
    },
    Linreg6 {
        rho: f64,
    },
    Mixture4 {
        rho: f64,
    },
    Csv {
        path: PathBuf,
        schema: SchemaRef,
        train_fraction: f64,
    },
}

fn default_x_max() -> f64 {
    TOY_X_MAX
}

impl Generator {
    fn default_sizes(&self) -> (usize, usize) {
        match self {
            Self::Toy { .. } => (3000, 0),
            Self::Linreg6 { .. } => (40000, 0),
            Self::Mixture4 { .. } => (4000, 1000),
            Self::Csv { .. } => (0, 0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub train: Option<usize>,
    #[serde(default)]
    pub test: Option<usize>,
    pub generator: Generator,
    pub partition: PartitionRule,
}

/// One materialized run of a scenario.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub train: Dataset,
    pub test: Option<Dataset>,
    pub sites: Vec<Dataset>,
    /// True coefficients, intercept first, when the generator has them.
    pub truth: Option<Vec<f64>>,
    pub mixture: Option<Mixture4>,
}

impl ScenarioSpec {
    pub fn from_toml_str(text: &str, base: Option<&Path>) -> Result<Self, ScenarioError> {
        let mut spec: Self = toml::from_str(text).map_err(|e| ScenarioError::Config(e.to_string()))?;
        if let Some(base) = base {
            spec.resolve_paths(base);
        }
        spec.partition.validate()?;
        Ok(spec)
    }

    pub fn from_file(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|e| ScenarioError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text, path.parent())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario specs always serialize")
    }

    /// Makes relative CSV and schema paths relative to `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        if let Generator::Csv { path, schema, .. } = &mut self.generator {
            if path.is_relative() {
                *path = base.join(&*path);
            }
            if let SchemaRef::File(p) = schema {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
    }

    /// Train and test sizes after generator defaults.
    pub fn sizes(&self) -> (usize, usize) {
        let (tr, te) = self.generator.default_sizes();
        (self.train.unwrap_or(tr), self.test.unwrap_or(te))
    }

    /// Generates run `run`: data from stream `(seed, run, 0)`, the split from
    /// `(seed, run, 1)`.
    pub fn materialize(&self, run: u64) -> Result<Scenario, ScenarioError> {
        let root = RngHandle::new(self.seed).fork(run);
        let (n_train, n_test) = self.sizes();
        let (train, test, truth, mixture) = match &self.generator {
            Generator::Toy { x_max } => {
                let toy = gen_toy_range(n_train, *x_max, root.fork(0))?;
                let test = (n_test > 0)
                    .then(|| gen_toy_range(n_test.max(3), *x_max, root.fork(2)).map(|t| t.data))
                    .transpose()?;
                (toy.data, test, Some(vec![20.0, 2.0]), None)
            }
            Generator::Linreg6 { rho } => {
                let train = gen_linreg6(n_train, *rho, root.fork(0))?;
                let test = (n_test > 0).then(|| gen_linreg6(n_test, *rho, root.fork(2))).transpose()?;
                (train, test, Some(LINREG6_BETA.to_vec()), None)
            }
            Generator::Mixture4 { rho } => {
                let m = gen_mixture4(n_train, n_test, *rho, root.fork(0))?;
                (m.train.clone(), Some(m.test.clone()), None, Some(m))
            }
            Generator::Csv {
                path,
                schema,
                train_fraction,
            } => {
                let schema = match schema {
                    SchemaRef::Inline(s) => s.clone(),
                    SchemaRef::File(p) => CsvSchema::from_file(p)?,
                };
                let (data, _) = load_csv(path, &schema)?;
                let (train, test) = train_test_split(&data, *train_fraction, root.fork(0))?;
                (train, Some(test), None, None)
            }
        };
        let sites = partition(&train, &self.partition, root.fork(1))?;
        Ok(Scenario {
            train,
            test,
            sites,
            truth,
            mixture,
        })
    }
}

/// Random split with `round(fraction * n)` training rows.
pub fn train_test_split(data: &Dataset, fraction: f64, rng: RngHandle) -> Result<(Dataset, Dataset), ScenarioError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(ScenarioError::InvalidParameter(format!("train fraction {fraction} must lie in (0, 1)")));
    }
    let mut rows: Vec<usize> = (0..data.n()).collect();
    rows.shuffle(&mut rng.rng());
    let k = (fraction * data.n() as f64).round() as usize;
    if k == 0 || k == data.n() {
        return Err(ScenarioError::InvalidParameter(format!("{} rows cannot be split at {fraction}", data.n())));
    }
    let (mut a, mut b) = (rows[..k].to_vec(), rows[k..].to_vec());
    a.sort_unstable();
    b.sort_unstable();
    Ok((data.subset(&a)?, data.subset(&b)?))
}

/// Split layouts and training fraction for one of the UCI benchmarks.
#[derive(Debug, Clone, PartialEq)]
pub struct UciPreset {
    pub name: &'static str,
    pub train_fraction: f64,
    pub n_classes: usize,
}

pub const UCI_PRESETS: [UciPreset; 3] = [
    UciPreset {
        name: "thyroid",
        train_fraction: 0.8,
        n_classes: 3,
    },
    UciPreset {
        name: "bank",
        train_fraction: 0.2,
        n_classes: 2,
    },
    UciPreset {
        name: "insurance",
        train_fraction: 0.8,
        n_classes: 2,
    },
];

impl UciPreset {
    pub fn find(name: &str) -> Option<&'static UciPreset> {
        UCI_PRESETS.iter().find(|p| p.name.eq_ignore_ascii_case(name))
    }

    /// Thyroid: D1 = {C1+C2 | C3}, D2 = {C1+C2+½C3 | ½C3}.
    /// Two-class sets: D1 = {C1 | C2}, D2 = {70%C1+30%C2 | 30%C1+70%C2}.
    /// D3 is a random half split everywhere.
    pub fn rule(&self, setting: Setting) -> PartitionRule {
        match (self.n_classes, setting) {
            (_, Setting::D3) => PartitionRule::EqualRandom { sites: 2 },
            (3, Setting::D1) => PartitionRule::ByComponents {
                sites: vec![vec![Share::all(0), Share::all(1)], vec![Share::all(2)]],
            },
            (3, Setting::D2) => PartitionRule::ByComponents {
                sites: vec![vec![Share::all(0), Share::all(1), Share::part(2, 0.5)], vec![Share::part(2, 0.5)]],
            },
            (_, Setting::D1) => PartitionRule::ByComponents {
                sites: vec![vec![Share::all(0)], vec![Share::all(1)]],
            },
            (_, Setting::D2) => PartitionRule::ByComponents {
                sites: vec![
                    vec![Share::part(0, 0.7), Share::part(1, 0.3)],
                    vec![Share::part(0, 0.3), Share::part(1, 0.7)],
                ],
            },
        }
    }
}

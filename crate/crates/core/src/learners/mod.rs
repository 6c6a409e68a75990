//! Weighted learners usable on raw data (unit weights) and on pooled
//! signatures alike.

mod forest;
mod linear;
mod logistic;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{Dataset, Matrix, NumericsError, Response, RngHandle, WeightedDesign};

pub use forest::{
    best_split, default_mtry, fit_forest, weighted_bootstrap, DecisionTree, Forest, ForestNode, ForestParams, Split,
};
pub use linear::{fit_linear, LinearModel};
pub use logistic::{
    fit_binary, fit_l1_logistic, fit_l1_logistic_selected, lambda_max, ovr_objectives, soft_threshold, BinaryFit,
    LambdaSelection, LogisticModel, LogisticParams,
};

#[derive(Debug, Error)]
pub enum LearnerError {
    #[error("wrong task: {0}")]
    WrongTask(&'static str),
    #[error("dimension mismatch: model expects {expected} features, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("training labels contain a single class")]
    SingleClass,
    #[error("no convergence after {passes} passes (last coefficient change {gap:e})")]
    NoConvergence { passes: usize, gap: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("model artifact: {0}")]
    Artifact(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<(), LearnerError> {
    if expected == found {
        Ok(())
    } else {
        Err(LearnerError::DimensionMismatch { expected, found })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct L1Config {
    /// Fixed penalty; `None` selects it on a holdout.
    pub lambda: Option<f64>,
    pub n_lambda: usize,
    pub min_ratio: f64,
    pub holdout: f64,
    pub tol: f64,
    pub max_passes: usize,
    pub standardize: bool,
}

impl Default for L1Config {
    fn default() -> Self {
        let p = LogisticParams::default();
        Self {
            lambda: None,
            n_lambda: 20,
            min_ratio: 1e-3,
            holdout: 0.2,
            tol: p.tol,
            max_passes: p.max_passes,
            standardize: p.standardize,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForestConfig {
    pub trees: usize,
    /// Features tried per split; `None` means `⌊√d⌋`.
    pub mtry: Option<usize>,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self { trees: 100, mtry: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "learner", rename_all = "lowercase")]
pub enum LearnerConfig {
    Lm,
    L1logit(L1Config),
    Rf(ForestConfig),
}

impl LearnerConfig {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Lm => "lm",
            Self::L1logit(_) => "l1logit",
            Self::Rf(_) => "rf",
        }
    }

    /// Default configuration for a learner name (`lm`, `l1logit`, `rf`).
    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "lm" => Some(Self::Lm),
            "l1logit" => Some(Self::L1logit(L1Config::default())),
            "rf" => Some(Self::Rf(ForestConfig::default())),
            _ => None,
        }
    }
}

/// Side information from a fit.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitInfo {
    pub lambda: Option<LambdaSelection>,
}

/// Fits the configured learner. `rng` drives the holdout split and the
/// forest bootstraps.
pub fn fit(design: &WeightedDesign, cfg: &LearnerConfig, rng: RngHandle) -> Result<(ModelArtifact, FitInfo), LearnerError> {
    match cfg {
        LearnerConfig::Lm => Ok((ModelArtifact::Linear(fit_linear(design)?), FitInfo::default())),
        LearnerConfig::L1logit(c) => {
            let params = LogisticParams {
                lambda: c.lambda.unwrap_or(0.0),
                tol: c.tol,
                max_passes: c.max_passes,
                standardize: c.standardize,
            };
            match c.lambda {
                Some(_) => Ok((ModelArtifact::Logistic(fit_l1_logistic(design, &params)?), FitInfo::default())),
                None => {
                    let (m, sel) = fit_l1_logistic_selected(design, &params, c.n_lambda, c.min_ratio, c.holdout, rng)?;
                    Ok((ModelArtifact::Logistic(m), FitInfo { lambda: Some(sel) }))
                }
            }
        }
        LearnerConfig::Rf(c) => {
            let mtry = c.mtry.unwrap_or_else(|| default_mtry(design.d()));
            let f = fit_forest(design, &ForestParams { trees: c.trees, mtry }, rng)?;
            Ok((ModelArtifact::Forest(f), FitInfo::default()))
        }
    }
}

pub const ARTIFACT_FORMAT: &str = "dmlfed-model";
pub const ARTIFACT_VERSION: u32 = 1;

/// A fitted model of any kind.
///
/// The serialized form is a JSON object
/// `{"format": "dmlfed-model", "version": 1, "model": {"kind": ..., ...}}`.
/// Floats are written in shortest round-trip form, so decoding restores every
/// coefficient bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelArtifact {
    Linear(LinearModel),
    Logistic(LogisticModel),
    Forest(Forest),
}

#[derive(Serialize, Deserialize)]
struct Envelope<M> {
    format: String,
    version: u32,
    model: M,
}

impl ModelArtifact {
    pub fn dim(&self) -> usize {
        match self {
            Self::Linear(m) => m.coefficients.len(),
            Self::Logistic(m) => m.dim(),
            Self::Forest(f) => f.dim,
        }
    }

    /// Predictions as reals: fitted values for regression, class indices
    /// otherwise.
    pub fn predict(&self, x: &Matrix) -> Result<Vec<f64>, LearnerError> {
        Ok(match self {
            Self::Linear(m) => m.predict(x)?,
            Self::Logistic(m) => m.predict(x)?.into_iter().map(|c| c as f64).collect(),
            Self::Forest(f) => f.predict(x)?.into_iter().map(|c| c as f64).collect(),
        })
    }

    pub fn predict_labels(&self, x: &Matrix) -> Result<Vec<usize>, LearnerError> {
        match self {
            Self::Linear(_) => Err(LearnerError::WrongTask("a linear model does not predict labels")),
            Self::Logistic(m) => m.predict(x),
            Self::Forest(f) => f.predict(x),
        }
    }

    /// Mean squared error for regression, misclassification rate for
    /// classification.
    pub fn test_error(&self, test: &Dataset) -> Result<f64, LearnerError> {
        let n = test.n() as f64;
        match test.response() {
            Response::Real(y) => {
                let p = self.predict(test.features())?;
                Ok(p.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n)
            }
            Response::Class { labels, .. } => {
                let p = self.predict_labels(test.features())?;
                Ok(p.iter().zip(labels).filter(|(a, b)| a != b).count() as f64 / n)
            }
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&Envelope {
            format: ARTIFACT_FORMAT.to_string(),
            version: ARTIFACT_VERSION,
            model: self,
        })
        .expect("model values are finite")
    }

    pub fn from_json(s: &str) -> Result<Self, LearnerError> {
        let env: Envelope<serde_json::Value> =
            serde_json::from_str(s).map_err(|e| LearnerError::Artifact(e.to_string()))?;
        if env.format != ARTIFACT_FORMAT {
            return Err(LearnerError::Artifact(format!("unknown format '{}'", env.format)));
        }
        if env.version != ARTIFACT_VERSION {
            return Err(LearnerError::Artifact(format!("unsupported version {}", env.version)));
        }
        serde_json::from_value(env.model).map_err(|e| LearnerError::Artifact(e.to_string()))
    }
}

use serde::{Deserialize, Serialize};

use super::DmlError;
use crate::numerics::{Dataset, Matrix, Response, RngHandle, Task, WeightedDesign};

/// One representative point: a group centroid, its response summary and the
/// number of raw rows it stands for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rep {
    pub centroid: Vec<f64>,
    /// Mean response for regression; the class label (as an integer-valued
    /// float) for classification.
    pub response: f64,
    pub weight: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TransformDescriptor {
    KMeans { k: usize },
    KdTree { max_leaf: usize },
    RpTree { max_leaf: usize },
}

/// The weighted representative set a site transmits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Signature {
    pub site_id: String,
    pub dim: usize,
    pub task: Task,
    pub transform: TransformDescriptor,
    pub rng: RngHandle,
    pub reps: Vec<Rep>,
    /// Row-to-rep map, kept at the site for distortion bookkeeping. Never
    /// serialized onto the wire.
    #[serde(skip)]
    pub assignment: Option<Vec<usize>>,
}

impl Signature {
    pub fn len(&self) -> usize {
        self.reps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reps.is_empty()
    }

    pub fn total_weight(&self) -> u64 {
        self.reps.iter().map(|r| r.weight).sum()
    }

    pub fn min_weight(&self) -> u64 {
        self.reps.iter().map(|r| r.weight).min().unwrap_or(0)
    }

    /// Checks the structural invariants: at least one rep, every weight at
    /// least 1, centroids of dimension `dim`, finite values and valid labels.
    pub fn validate(&self) -> Result<(), DmlError> {
        if self.reps.is_empty() {
            return Err(DmlError::InvalidSignature("no representatives".into()));
        }
        for (i, r) in self.reps.iter().enumerate() {
            if r.weight == 0 {
                return Err(DmlError::InvalidSignature(format!("rep {i} has zero weight")));
            }
            if r.centroid.len() != self.dim {
                return Err(DmlError::InvalidSignature(format!(
                    "rep {i} has dimension {}, expected {}",
                    r.centroid.len(),
                    self.dim
                )));
            }
            if !r.response.is_finite() || r.centroid.iter().any(|x| !x.is_finite()) {
                return Err(DmlError::InvalidSignature(format!("rep {i} is not finite")));
            }
            if let Task::Classification { n_classes } = self.task {
                if r.response < 0.0 || r.response.fract() != 0.0 || r.response >= n_classes as f64 {
                    return Err(DmlError::InvalidSignature(format!(
                        "rep {i} label {} outside 0..{n_classes}",
                        r.response
                    )));
                }
            }
        }
        if let Some(a) = &self.assignment {
            if a.iter().any(|&j| j >= self.reps.len()) {
                return Err(DmlError::InvalidSignature("assignment out of range".into()));
            }
        }
        Ok(())
    }

    /// The signature as a weighted design with group sizes as weights.
    pub fn to_design(&self) -> Result<WeightedDesign, DmlError> {
        pool(std::slice::from_ref(self))
    }
}

/// Concatenates signatures, in the given order, into one weighted design.
pub fn pool(signatures: &[Signature]) -> Result<WeightedDesign, DmlError> {
    let first = signatures
        .first()
        .ok_or_else(|| DmlError::InvalidSignature("no signatures to pool".into()))?;
    let mut points = Matrix::zeros(0, first.dim);
    let mut weights = Vec::new();
    let mut reals = Vec::new();
    let mut labels = Vec::new();
    for s in signatures {
        s.validate()?;
        if s.dim != first.dim {
            return Err(DmlError::DimensionMismatch {
                expected: first.dim,
                found: s.dim,
            });
        }
        if s.task != first.task {
            return Err(DmlError::InvalidSignature(format!(
                "site {} has task {:?}, expected {:?}",
                s.site_id, s.task, first.task
            )));
        }
        for r in &s.reps {
            points.push_row(&r.centroid)?;
            weights.push(r.weight as f64);
            match s.task {
                Task::Regression => reals.push(r.response),
                Task::Classification { .. } => labels.push(r.response as usize),
            }
        }
    }
    let responses = match first.task {
        Task::Regression => Response::Real(reals),
        Task::Classification { n_classes } => Response::Class { labels, n_classes },
    };
    Ok(WeightedDesign::new(points, responses, weights)?)
}

/// Builds reps from a partition of `data` rows into groups, and the matching
/// row-to-rep assignment. Groups must be nonempty.
pub(crate) fn reps_from_groups(
    data: &Dataset,
    groups: &[Vec<usize>],
) -> Result<(Vec<Rep>, Vec<usize>), DmlError> {
    let d = data.d();
    let x = data.features();
    let mut assignment = vec![usize::MAX; data.n()];
    let mut reps = Vec::with_capacity(groups.len());
    for (g, rows) in groups.iter().enumerate() {
        if rows.is_empty() {
            return Err(DmlError::InvalidSignature(format!("group {g} is empty")));
        }
        let mut centroid = vec![0.0; d];
        for &i in rows {
            if i >= data.n() {
                return Err(DmlError::CorruptTree(format!(
                    "row index {i} out of range for {} rows",
                    data.n()
                )));
            }
            for (c, v) in centroid.iter_mut().zip(x.row(i)) {
                *c += v;
            }
            assignment[i] = g;
        }
        let w = rows.len() as f64;
        centroid.iter_mut().for_each(|c| *c /= w);
        let response = match data.response() {
            Response::Real(y) => rows.iter().map(|&i| y[i]).sum::<f64>() / w,
            Response::Class { labels, n_classes } => majority(rows.iter().map(|&i| labels[i]), *n_classes) as f64,
        };
        reps.push(Rep {
            centroid,
            response,
            weight: rows.len() as u64,
        });
    }
    if let Some(i) = assignment.iter().position(|&a| a == usize::MAX) {
        return Err(DmlError::InvalidSignature(format!("row {i} belongs to no group")));
    }
    Ok((reps, assignment))
}

/// Most frequent label; ties go to the smallest label.
pub(crate) fn majority(labels: impl Iterator<Item = usize>, n_classes: usize) -> usize {
    let mut counts = vec![0usize; n_classes];
    for l in labels {
        counts[l] += 1;
    }
    let mut best = 0;
    for (c, &n) in counts.iter().enumerate() {
        if n > counts[best] {
            best = c;
        }
    }
    best
}

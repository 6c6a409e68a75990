use serde::{Deserialize, Serialize};

use super::{Matrix, NumericsError};

/// Learning task, carried alongside every dataset, signature and design.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "snake_case")]
pub enum Task {
    Regression,
    Classification { n_classes: usize },
}

/// Response column: real values or class labels in `0..n_classes`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Response {
    Real(Vec<f64>),
    Class { labels: Vec<usize>, n_classes: usize },
}

impl Response {
    pub fn len(&self) -> usize {
        match self {
            Response::Real(v) => v.len(),
            Response::Class { labels, .. } => labels.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn task(&self) -> Task {
        match self {
            Response::Real(_) => Task::Regression,
            Response::Class { n_classes, .. } => Task::Classification {
                n_classes: *n_classes,
            },
        }
    }

    pub fn select(&self, idx: &[usize]) -> Response {
        match self {
            Response::Real(v) => Response::Real(idx.iter().map(|&i| v[i]).collect()),
            Response::Class { labels, n_classes } => Response::Class {
                labels: idx.iter().map(|&i| labels[i]).collect(),
                n_classes: *n_classes,
            },
        }
    }

    /// Response as reals; class labels map to `label as f64`.
    pub fn value(&self, i: usize) -> f64 {
        match self {
            Response::Real(v) => v[i],
            Response::Class { labels, .. } => labels[i] as f64,
        }
    }

    fn validate(&self) -> Result<(), NumericsError> {
        match self {
            Response::Real(v) => {
                if let Some(i) = v.iter().position(|x| !x.is_finite()) {
                    return Err(NumericsError::InvalidDataset(format!(
                        "non-finite response at row {i}"
                    )));
                }
            }
            Response::Class { labels, n_classes } => {
                if *n_classes == 0 {
                    return Err(NumericsError::InvalidDataset("zero classes".into()));
                }
                if let Some(i) = labels.iter().position(|&l| l >= *n_classes) {
                    return Err(NumericsError::InvalidDataset(format!(
                        "label {} at row {i} outside 0..{n_classes}",
                        labels[i]
                    )));
                }
            }
        }
        Ok(())
    }

    fn concat(parts: &[&Response]) -> Result<Response, NumericsError> {
        let first = parts
            .first()
            .ok_or_else(|| NumericsError::InvalidDataset("nothing to concatenate".into()))?;
        match first {
            Response::Real(_) => {
                let mut out = Vec::new();
                for p in parts {
                    match p {
                        Response::Real(v) => out.extend_from_slice(v),
                        _ => return Err(task_mismatch()),
                    }
                }
                Ok(Response::Real(out))
            }
            Response::Class { n_classes, .. } => {
                let mut out = Vec::new();
                for p in parts {
                    match p {
                        Response::Class {
                            labels,
                            n_classes: c,
                        } if c == n_classes => out.extend_from_slice(labels),
                        _ => return Err(task_mismatch()),
                    }
                }
                Ok(Response::Class {
                    labels: out,
                    n_classes: *n_classes,
                })
            }
        }
    }
}

fn task_mismatch() -> NumericsError {
    NumericsError::InvalidDataset("cannot combine responses of different tasks".into())
}

/// A site's local data: `n x d` features plus a response column.
///
/// Construction validates that `n >= 1`, `d >= 1`, the response length
/// matches, every entry is finite and class labels lie in `0..n_classes`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    features: Matrix,
    response: Response,
    feature_names: Option<Vec<String>>,
}

impl Dataset {
    pub fn new(features: Matrix, response: Response) -> Result<Self, NumericsError> {
        if features.nrows() == 0 {
            return Err(NumericsError::InvalidDataset("dataset has no rows".into()));
        }
        if features.ncols() == 0 {
            return Err(NumericsError::InvalidDataset("dataset has no features".into()));
        }
        if features.nrows() != response.len() {
            return Err(NumericsError::DimensionMismatch(format!(
                "{} feature rows but {} responses",
                features.nrows(),
                response.len()
            )));
        }
        for (i, row) in features.rows().enumerate() {
            if let Some(j) = row.iter().position(|x| !x.is_finite()) {
                return Err(NumericsError::NonFinite { row: i, col: j });
            }
        }
        response.validate()?;
        Ok(Self {
            features,
            response,
            feature_names: None,
        })
    }

    pub fn regression(features: Matrix, y: Vec<f64>) -> Result<Self, NumericsError> {
        Self::new(features, Response::Real(y))
    }

    pub fn classification(
        features: Matrix,
        labels: Vec<usize>,
        n_classes: usize,
    ) -> Result<Self, NumericsError> {
        Self::new(features, Response::Class { labels, n_classes })
    }

    pub fn with_feature_names(mut self, names: Vec<String>) -> Result<Self, NumericsError> {
        if names.len() != self.d() {
            return Err(NumericsError::DimensionMismatch(format!(
                "{} feature names for {} features",
                names.len(),
                self.d()
            )));
        }
        self.feature_names = Some(names);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.features.nrows()
    }

    pub fn d(&self) -> usize {
        self.features.ncols()
    }

    pub fn task(&self) -> Task {
        self.response.task()
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn response(&self) -> &Response {
        &self.response
    }

    pub fn feature_names(&self) -> Option<&[String]> {
        self.feature_names.as_deref()
    }

    pub fn labels(&self) -> Option<&[usize]> {
        match &self.response {
            Response::Class { labels, .. } => Some(labels),
            Response::Real(_) => None,
        }
    }

    pub fn targets(&self) -> Option<&[f64]> {
        match &self.response {
            Response::Real(v) => Some(v),
            Response::Class { .. } => None,
        }
    }

    pub fn n_classes(&self) -> Option<usize> {
        match self.task() {
            Task::Classification { n_classes } => Some(n_classes),
            Task::Regression => None,
        }
    }

    /// Row indices grouped by class label; `None` for regression.
    pub fn class_indices(&self) -> Option<Vec<Vec<usize>>> {
        let (labels, c) = match &self.response {
            Response::Class { labels, n_classes } => (labels, *n_classes),
            Response::Real(_) => return None,
        };
        let mut out = vec![Vec::new(); c];
        for (i, &l) in labels.iter().enumerate() {
            out[l].push(i);
        }
        Some(out)
    }

    /// The rows `idx` as a new dataset. Errors if `idx` is empty.
    pub fn subset(&self, idx: &[usize]) -> Result<Dataset, NumericsError> {
        if idx.is_empty() {
            return Err(NumericsError::InvalidDataset("empty subset".into()));
        }
        Ok(Dataset {
            features: self.features.select_rows(idx),
            response: self.response.select(idx),
            feature_names: self.feature_names.clone(),
        })
    }

    pub fn concat(parts: &[&Dataset]) -> Result<Dataset, NumericsError> {
        let mats: Vec<&Matrix> = parts.iter().map(|p| &p.features).collect();
        let resp: Vec<&Response> = parts.iter().map(|p| &p.response).collect();
        let out = Dataset::new(Matrix::vstack(&mats)?, Response::concat(&resp)?)?;
        Ok(Dataset {
            feature_names: parts.first().and_then(|p| p.feature_names.clone()),
            ..out
        })
    }
}

/// Points, responses and positive weights handed to a learner.
///
/// For a pooled signature the weights are group sizes and sum to the number
/// of raw rows they stand for; for raw data every weight is 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedDesign {
    points: Matrix,
    responses: Response,
    weights: Vec<f64>,
}

impl WeightedDesign {
    pub fn new(points: Matrix, responses: Response, weights: Vec<f64>) -> Result<Self, NumericsError> {
        let m = points.nrows();
        if m == 0 {
            return Err(NumericsError::InvalidDesign("design has no rows".into()));
        }
        if responses.len() != m || weights.len() != m {
            return Err(NumericsError::DimensionMismatch(format!(
                "{m} points, {} responses, {} weights",
                responses.len(),
                weights.len()
            )));
        }
        if let Some(i) = weights.iter().position(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(NumericsError::InvalidDesign(format!(
                "weight {} at row {i} is not positive",
                weights[i]
            )));
        }
        for (i, row) in points.rows().enumerate() {
            if let Some(j) = row.iter().position(|x| !x.is_finite()) {
                return Err(NumericsError::NonFinite { row: i, col: j });
            }
        }
        responses.validate()?;
        Ok(Self {
            points,
            responses,
            weights,
        })
    }

    /// Unit-weight design over a raw dataset.
    pub fn unit(data: &Dataset) -> Self {
        Self {
            points: data.features.clone(),
            responses: data.response.clone(),
            weights: vec![1.0; data.n()],
        }
    }

    pub fn m(&self) -> usize {
        self.points.nrows()
    }

    pub fn d(&self) -> usize {
        self.points.ncols()
    }

    pub fn points(&self) -> &Matrix {
        &self.points
    }

    pub fn responses(&self) -> &Response {
        &self.responses
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn task(&self) -> Task {
        self.responses.task()
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn select(&self, idx: &[usize]) -> Result<WeightedDesign, NumericsError> {
        WeightedDesign::new(
            self.points.select_rows(idx),
            self.responses.select(idx),
            idx.iter().map(|&i| self.weights[i]).collect(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_input() {
        let x = Matrix::from_rows(&[[1.0], [f64::NAN]]).unwrap();
        assert!(matches!(
            Dataset::regression(x, vec![0.0, 1.0]),
            Err(NumericsError::NonFinite { row: 1, col: 0 })
        ));
        let x = Matrix::from_rows(&[[1.0], [2.0]]).unwrap();
        assert!(Dataset::classification(x.clone(), vec![0, 2], 2).is_err());
        assert!(Dataset::regression(x.clone(), vec![1.0]).is_err());
        assert!(Dataset::regression(Matrix::zeros(0, 1), vec![]).is_err());
        assert!(WeightedDesign::new(x.clone(), Response::Real(vec![1.0, 2.0]), vec![1.0, 0.0]).is_err());
    }

    #[test]
    fn subset_and_concat() {
        let x = Matrix::from_rows(&[[1.0], [2.0], [3.0]]).unwrap();
        let ds = Dataset::classification(x, vec![0, 1, 1], 2).unwrap();
        let a = ds.subset(&[0]).unwrap();
        let b = ds.subset(&[1, 2]).unwrap();
        let c = Dataset::concat(&[&a, &b]).unwrap();
        assert_eq!(c, ds);
        assert_eq!(ds.class_indices().unwrap(), vec![vec![0], vec![1, 2]]);
        assert!(ds.subset(&[]).is_err());
    }
}

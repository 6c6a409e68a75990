use serde::{Deserialize, Serialize};

use super::LearnerError;
use crate::numerics::{solve_least_squares, Matrix, Response, WeightedDesign};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub intercept: f64,
    pub coefficients: Vec<f64>,
}

impl LinearModel {
    /// Intercept followed by the slopes.
    pub fn beta(&self) -> Vec<f64> {
        std::iter::once(self.intercept).chain(self.coefficients.iter().copied()).collect()
    }

    pub fn predict_row(&self, x: &[f64]) -> f64 {
        self.intercept + x.iter().zip(&self.coefficients).map(|(a, b)| a * b).sum::<f64>()
    }

    pub fn predict(&self, x: &Matrix) -> Result<Vec<f64>, LearnerError> {
        super::check_dim(self.coefficients.len(), x.ncols())?;
        Ok(x.rows().map(|r| self.predict_row(r)).collect())
    }
}

/// Weighted least squares with an intercept column prepended.
pub fn fit_linear(design: &WeightedDesign) -> Result<LinearModel, LearnerError> {
    let y = match design.responses() {
        Response::Real(y) => y,
        Response::Class { .. } => return Err(LearnerError::WrongTask("linear regression needs a real response")),
    };
    let m = design.m();
    let d = design.d();
    let mut a = Matrix::zeros(m, d + 1);
    for (i, x) in design.points().rows().enumerate() {
        let row = a.row_mut(i);
        row[0] = 1.0;
        row[1..].copy_from_slice(x);
    }
    let beta = solve_least_squares(&a, y, design.weights())?;
    Ok(LinearModel {
        intercept: beta[0],
        coefficients: beta[1..].to_vec(),
    })
}

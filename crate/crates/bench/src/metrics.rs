use anyhow::{bail, ensure, Result};
use dmlfed_core::learners::ModelArtifact;
use dmlfed_core::numerics::Dataset;

/// Mean over fits of the summed squared coefficient error, intercept
/// included.
pub fn coeff_mse(fits: &[Vec<f64>], truth: &[f64]) -> Result<f64> {
    ensure!(!fits.is_empty(), "coefficient MSE needs at least one fit");
    let mut total = 0.0;
    for f in fits {
        ensure!(
            f.len() == truth.len(),
            "fit has {} coefficients, truth has {}",
            f.len(),
            truth.len()
        );
        total += sq_err(f, truth);
    }
    Ok(total / fits.len() as f64)
}

pub fn sq_err(fit: &[f64], truth: &[f64]) -> f64 {
    fit.iter().zip(truth).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Fraction of test rows whose predicted label is correct.
pub fn accuracy(model: &ModelArtifact, test: &Dataset) -> Result<f64> {
    let Some(labels) = test.labels() else {
        bail!("accuracy needs a classification test set");
    };
    ensure!(test.n() > 0, "empty test set");
    let pred = model.predict_labels(test.features())?;
    Ok(pred.iter().zip(labels).filter(|(a, b)| a == b).count() as f64 / test.n() as f64)
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_sd(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (m, 0.0);
    }
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, v.sqrt())
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let mx = lx.iter().sum::<f64>() / lx.len() as f64;
    let my = ly.iter().sum::<f64>() / ly.len() as f64;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;
    use dmlfed_core::learners::{ForestConfig, LearnerConfig, ModelArtifact};
    use dmlfed_core::numerics::{Matrix, RngHandle, WeightedDesign};

    #[test]
    fn mse_arithmetic() {
        let truth = vec![2.0, 3.0, 0.0];
        assert_eq!(coeff_mse(&[truth.clone(), truth.clone()], &truth).unwrap(), 0.0);
        let off = vec![2.0, 3.01, 0.0];
        assert!((coeff_mse(&[off], &truth).unwrap() - 1e-4).abs() < 1e-15);
        assert!(coeff_mse(&[], &truth).is_err());
        assert!(coeff_mse(&[vec![1.0]], &truth).is_err());
    }

    fn forest_on(x: Vec<[f64; 1]>, labels: Vec<usize>, c: usize) -> ModelArtifact {
        let data = Dataset::classification(Matrix::from_rows(&x).unwrap(), labels, c).unwrap();
        let cfg = LearnerConfig::Rf(ForestConfig { trees: 5, mtry: None });
        dmlfed_core::learners::fit(&WeightedDesign::unit(&data), &cfg, RngHandle::new(0)).unwrap().0
    }

    #[test]
    fn constant_model_on_its_own_class() {
        let model = forest_on(vec![[0.0], [1.0], [2.0]], vec![2, 2, 2], 3);
        let test = Dataset::classification(Matrix::from_rows(&[[5.0], [-1.0]]).unwrap(), vec![2, 2], 3).unwrap();
        assert_eq!(accuracy(&model, &test).unwrap(), 1.0);
    }

    #[test]
    fn chance_level_on_balanced_classes() {
        // a model that ignores x scores the share of its constant class
        let model = forest_on(vec![[0.0], [0.0]], vec![1, 1], 4);
        let labels: Vec<usize> = (0..400).map(|i| i % 4).collect();
        let x: Vec<[f64; 1]> = (0..400).map(|i| [i as f64]).collect();
        let test = Dataset::classification(Matrix::from_rows(&x).unwrap(), labels, 4).unwrap();
        assert_eq!(accuracy(&model, &test).unwrap(), 0.25);
    }

    #[test]
    fn slope_of_power_law() {
        let x = [1.0, 2.0, 4.0, 8.0];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(-1.5)).collect();
        assert!((loglog_slope(&x, &y) + 1.5).abs() < 1e-12);
        assert_eq!(mean_sd(&[1.0, 3.0]), (2.0, 2f64.sqrt()));
    }
}

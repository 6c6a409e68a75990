use rand::Rng;
use rand_distr::StandardNormal;

use super::ScenarioError;
use crate::numerics::{Dataset, Matrix, RngHandle};

/// Noise variance of the toy line.
pub const TOY_NOISE_VAR: f64 = 50.0;
/// Site boundaries of the toy line on x.
pub const TOY_CUTS: [f64; 2] = [20.0, 80.0];
pub const TOY_X_MAX: f64 = 120.0;

/// Intercept first, then x1..x6.
pub const LINREG6_BETA: [f64; 7] = [2.0, 3.0, 0.0, 0.5, 1.2, 0.0, 1.0];
pub const LINREG6_MEAN: [f64; 6] = [2.0, 0.0, 0.0, 0.0, 0.0, 0.0];

pub const MIXTURE_DIM: usize = 100;

/// `Σ[i][j] = ρ^|i−j|`.
pub fn ar1_covariance(d: usize, rho: f64) -> Matrix {
    let mut m = Matrix::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            m.set(i, j, rho.powi((i as i32 - j as i32).abs()));
        }
    }
    m
}

/// Lower Cholesky factor of a symmetric positive definite matrix.
pub fn cholesky(a: &Matrix) -> Result<Matrix, ScenarioError> {
    let d = a.nrows();
    let mut l = Matrix::zeros(d, d);
    for j in 0..d {
        let mut s = a.get(j, j);
        for k in 0..j {
            s -= l.get(j, k) * l.get(j, k);
        }
        if s <= 1e-12 || !s.is_finite() {
            return Err(ScenarioError::InvalidParameter(format!(
                "covariance is not positive definite (pivot {j})"
            )));
        }
        let diag = s.sqrt();
        l.set(j, j, diag);
        for i in j + 1..d {
            let mut s = a.get(i, j);
            for k in 0..j {
                s -= l.get(i, k) * l.get(j, k);
            }
            l.set(i, j, s / diag);
        }
    }
    Ok(l)
}

/// Solves `L Lᵀ x = b` for a lower Cholesky factor `L`.
pub fn cholesky_solve(l: &Matrix, b: &[f64]) -> Vec<f64> {
    let d = l.nrows();
    let mut y = b.to_vec();
    for i in 0..d {
        for k in 0..i {
            y[i] -= l.get(i, k) * y[k];
        }
        y[i] /= l.get(i, i);
    }
    for i in (0..d).rev() {
        for k in i + 1..d {
            y[i] -= l.get(k, i) * y[k];
        }
        y[i] /= l.get(i, i);
    }
    y
}

fn check_rho(rho: f64) -> Result<(), ScenarioError> {
    if rho.is_finite() && rho.abs() < 1.0 {
        Ok(())
    } else {
        Err(ScenarioError::InvalidParameter(format!("rho = {rho} must lie in (-1, 1)")))
    }
}

/// Writes `mean + L z` into `out`, `z` standard normal.
fn gaussian_row<R: Rng>(l: &Matrix, mean: &[f64], rng: &mut R, z: &mut [f64], out: &mut [f64]) {
    for v in z.iter_mut() {
        *v = rng.sample(StandardNormal);
    }
    for i in 0..out.len() {
        let row = &l.row(i)[..=i];
        out[i] = mean[i] + row.iter().zip(&z[..=i]).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// The toy line: one feature, three sites split on x.
#[derive(Debug, Clone)]
pub struct Toy {
    pub data: Dataset,
    pub sites: Vec<Dataset>,
    pub cuts: Vec<f64>,
    pub x_max: f64,
}

/// `y = 20 + 2x + ε` with x uniform on (0, 120).
pub fn gen_toy(n: usize, rng: RngHandle) -> Result<Toy, ScenarioError> {
    gen_toy_range(n, TOY_X_MAX, rng)
}

/// Toy line with x uniform on (0, x_max). Rows per site are fixed at their
/// expected share of n (at least one each), then drawn uniformly within the
/// site's range, so the pooled x is a stratified uniform sample.
pub fn gen_toy_range(n: usize, x_max: f64, rng: RngHandle) -> Result<Toy, ScenarioError> {
    if n < 3 {
        return Err(ScenarioError::InvalidParameter(format!("toy needs n >= 3, got {n}")));
    }
    if !(x_max > TOY_CUTS[1]) {
        return Err(ScenarioError::InvalidParameter(format!("x_max = {x_max} must exceed {}", TOY_CUTS[1])));
    }
    let bounds = [0.0, TOY_CUTS[0], TOY_CUTS[1], x_max];
    let shares: Vec<f64> = (0..3).map(|s| n as f64 * (bounds[s + 1] - bounds[s]) / x_max).collect();
    let mut counts: Vec<usize> = shares.iter().map(|s| s.floor() as usize).collect();
    // largest remainder
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| (shares[b] - shares[b].floor()).total_cmp(&(shares[a] - shares[a].floor())));
    let mut left = n - counts.iter().sum::<usize>();
    for &s in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[s] += 1;
        left -= 1;
    }
    while let Some(empty) = counts.iter().position(|&c| c == 0) {
        let big = (0..3).max_by_key(|&s| counts[s]).unwrap();
        counts[big] -= 1;
        counts[empty] += 1;
    }

    let mut r = rng.rng();
    let sd = TOY_NOISE_VAR.sqrt();
    let mut sites = Vec::with_capacity(3);
    for s in 0..3 {
        let (lo, hi) = (bounds[s], bounds[s + 1]);
        let mut xs = Vec::with_capacity(counts[s]);
        let mut ys = Vec::with_capacity(counts[s]);
        for _ in 0..counts[s] {
            // [lo, hi); the first range is open at 0
            let mut x = lo + (hi - lo) * r.random::<f64>();
            while s == 0 && x == 0.0 {
                x = hi * r.random::<f64>();
            }
            let e: f64 = r.sample(StandardNormal);
            xs.push(x);
            ys.push(20.0 + 2.0 * x + sd * e);
        }
        sites.push(Dataset::regression(Matrix::from_vec(counts[s], 1, xs)?, ys)?);
    }
    let data = Dataset::concat(&sites.iter().collect::<Vec<_>>())?;
    Ok(Toy {
        data,
        sites,
        cuts: TOY_CUTS.to_vec(),
        x_max,
    })
}

/// Six correlated Gaussian features, mean (2,0,…,0), covariance ρ^|i−j|,
/// and `y = 2 + 3x₁ + 0.5x₃ + 1.2x₄ + x₆ + ε` with ε ~ N(0,1).
pub fn gen_linreg6(n: usize, rho: f64, rng: RngHandle) -> Result<Dataset, ScenarioError> {
    check_rho(rho)?;
    let l = cholesky(&ar1_covariance(6, rho))?;
    let mut r = rng.rng();
    let mut x = Matrix::zeros(n, 6);
    let mut y = Vec::with_capacity(n);
    let mut z = [0.0; 6];
    for i in 0..n {
        gaussian_row(&l, &LINREG6_MEAN, &mut r, &mut z, x.row_mut(i));
        let row = x.row(i);
        let e: f64 = r.sample(StandardNormal);
        y.push(LINREG6_BETA[0] + row.iter().zip(&LINREG6_BETA[1..]).map(|(a, b)| a * b).sum::<f64>() + e);
    }
    Ok(Dataset::regression(x, y)?)
}

/// Four equally weighted Gaussian components sharing covariance ρ^|i−j|.
/// Labels are component ids 0..4.
#[derive(Debug, Clone)]
pub struct Mixture4 {
    pub train: Dataset,
    pub test: Dataset,
    pub means: Vec<Vec<f64>>,
    pub rho: f64,
}

impl Mixture4 {
    /// Bayes rule under the true densities: with equal priors and shared
    /// covariance it maximizes `μ_cᵀ Σ⁻¹ x − ½ μ_cᵀ Σ⁻¹ μ_c`.
    pub fn bayes_classifier(&self) -> Result<BayesClassifier, ScenarioError> {
        let l = cholesky(&ar1_covariance(self.means[0].len(), self.rho))?;
        let a: Vec<Vec<f64>> = self.means.iter().map(|m| cholesky_solve(&l, m)).collect();
        let c = a
            .iter()
            .zip(&self.means)
            .map(|(a, m)| -0.5 * a.iter().zip(m).map(|(p, q)| p * q).sum::<f64>())
            .collect();
        Ok(BayesClassifier { a, c })
    }
}

#[derive(Debug, Clone)]
pub struct BayesClassifier {
    a: Vec<Vec<f64>>,
    c: Vec<f64>,
}

impl BayesClassifier {
    pub fn predict_row(&self, x: &[f64]) -> usize {
        let mut best = (0, f64::NEG_INFINITY);
        for (k, (a, c)) in self.a.iter().zip(&self.c).enumerate() {
            let s = c + a.iter().zip(x).map(|(p, q)| p * q).sum::<f64>();
            if s > best.1 {
                best = (k, s);
            }
        }
        best.0
    }

    pub fn accuracy(&self, data: &Dataset) -> f64 {
        let labels = data.labels().expect("classification data");
        let hits = data.features().rows().zip(labels).filter(|(x, &y)| self.predict_row(x) == y).count();
        hits as f64 / data.n() as f64
    }
}

/// μ₁ ~ U[0, 0.4]^100, μ₂ = μ₁ with its second half negated, μ₃ = −μ₂,
/// μ₄ = −μ₁. Train and test rows are independent draws.
pub fn gen_mixture4(n_train: usize, n_test: usize, rho: f64, rng: RngHandle) -> Result<Mixture4, ScenarioError> {
    gen_mixture4_dim(n_train, n_test, rho, MIXTURE_DIM, rng)
}

pub fn gen_mixture4_dim(n_train: usize, n_test: usize, rho: f64, d: usize, rng: RngHandle) -> Result<Mixture4, ScenarioError> {
    check_rho(rho)?;
    if d < 2 {
        return Err(ScenarioError::InvalidParameter("mixture needs d >= 2".into()));
    }
    let l = cholesky(&ar1_covariance(d, rho))?;
    let mut r = rng.rng();
    let mu1: Vec<f64> = (0..d).map(|_| 0.4 * r.random::<f64>()).collect();
    let mu2: Vec<f64> = mu1.iter().enumerate().map(|(j, &v)| if j < d / 2 { v } else { -v }).collect();
    let mu3: Vec<f64> = mu2.iter().map(|v| -v).collect();
    let mu4: Vec<f64> = mu1.iter().map(|v| -v).collect();
    let means = vec![mu1, mu2, mu3, mu4];
    let mut z = vec![0.0; d];
    let mut draw = |n: usize, r: &mut rand_chacha::ChaCha8Rng| -> Result<Dataset, ScenarioError> {
        let mut x = Matrix::zeros(n, d);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let c = r.random_range(0..4);
            gaussian_row(&l, &means[c], r, &mut z, x.row_mut(i));
            labels.push(c);
        }
        Ok(Dataset::classification(x, labels, 4)?)
    };
    let train = draw(n_train, &mut r)?;
    let test = draw(n_test, &mut r)?;
    Ok(Mixture4 { train, test, means, rho })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::{fit_l1_logistic, fit_linear, LogisticParams};
    use crate::numerics::WeightedDesign;

    #[test]
    fn cholesky_of_ar1_matches_closed_form() {
        // x_j = ρ x_{j−1} + √(1−ρ²) z_j gives L[i][0] = ρ^i, L[i][j] = ρ^(i−j)√(1−ρ²)
        let rho: f64 = 0.6;
        let l = cholesky(&ar1_covariance(6, rho)).unwrap();
        let s = (1.0 - rho * rho).sqrt();
        for i in 0..6 {
            for j in 0..6 {
                let want = if j > i {
                    0.0
                } else if j == 0 {
                    rho.powi(i as i32)
                } else {
                    rho.powi((i - j) as i32) * s
                };
                assert!((l.get(i, j) - want).abs() < 1e-12, "{i},{j}");
            }
        }
        let b = [1.0, -2.0, 0.5, 0.0, 3.0, 1.0];
        let x = cholesky_solve(&l, &b);
        let back = ar1_covariance(6, rho).matvec(&x);
        for (u, v) in back.iter().zip(b) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn bad_rho_is_rejected() {
        assert!(gen_linreg6(10, 1.0, RngHandle::new(0)).is_err());
        assert!(gen_linreg6(10, -1.5, RngHandle::new(0)).is_err());
        assert!(gen_mixture4(10, 10, 1.0, RngHandle::new(0)).is_err());
    }

    #[test]
    fn toy_covers_all_sites() {
        let t = gen_toy(3, RngHandle::new(1)).unwrap();
        assert_eq!(t.sites.iter().map(Dataset::n).collect::<Vec<_>>(), vec![1, 1, 1]);
        let t = gen_toy(3000, RngHandle::new(1)).unwrap();
        assert_eq!(t.sites.iter().map(Dataset::n).collect::<Vec<_>>(), vec![500, 1500, 1000]);
        for (s, site) in t.sites.iter().enumerate() {
            let lo = [0.0, 20.0, 80.0][s];
            let hi = [20.0, 80.0, 120.0][s];
            assert!(site.features().column(0).iter().all(|&x| x >= lo && x < hi && x > 0.0));
        }
    }

    fn slope(data: &Dataset) -> f64 {
        fit_linear(&WeightedDesign::unit(data)).unwrap().coefficients[0]
    }

    #[test]
    fn toy_slope_within_three_standard_errors() {
        let t = gen_toy(3000, RngHandle::new(2)).unwrap();
        let x = t.data.features().column(0);
        let mean = x.iter().sum::<f64>() / x.len() as f64;
        let sxx: f64 = x.iter().map(|v| (v - mean).powi(2)).sum();
        let se = (TOY_NOISE_VAR / sxx).sqrt();
        assert!((slope(&t.data) - 2.0).abs() < 3.0 * se);
    }

    #[test]
    fn toy_first_site_slope_is_unstable() {
        let (mut full, mut first) = (Vec::new(), Vec::new());
        for seed in 0..20 {
            let t = gen_toy(3000, RngHandle::new(seed)).unwrap();
            full.push(slope(&t.data));
            first.push(slope(&t.sites[0]));
        }
        let var = |v: &[f64]| {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
        };
        assert!(var(&first) > 25.0 * var(&full));
    }

    #[test]
    fn linreg6_covariance_matches() {
        let rho = 0.6;
        let data = gen_linreg6(40000, rho, RngHandle::new(3)).unwrap();
        let x = data.features();
        let n = x.nrows() as f64;
        let means: Vec<f64> = (0..6).map(|j| x.column(j).iter().sum::<f64>() / n).collect();
        for (j, (m, want)) in means.iter().zip(LINREG6_MEAN).enumerate() {
            assert!((m - want).abs() < 0.03, "mean {j}");
        }
        for i in 0..6 {
            for j in 0..6 {
                let c = x.rows().map(|r| (r[i] - means[i]) * (r[j] - means[j])).sum::<f64>() / (n - 1.0);
                assert!((c - f64::powi(rho, (i as i32 - j as i32).abs())).abs() < 0.02, "{i},{j}");
            }
        }
        let beta = fit_linear(&WeightedDesign::unit(&data)).unwrap().beta();
        for (b, t) in beta.iter().zip(LINREG6_BETA) {
            assert!((b - t).abs() < 0.05);
        }
    }

    #[test]
    fn linreg6_independent_at_zero_rho() {
        let data = gen_linreg6(20000, 0.0, RngHandle::new(4)).unwrap();
        let x = data.features();
        let a = x.column(1);
        let b = x.column(2);
        let r = a.iter().zip(&b).map(|(p, q)| p * q).sum::<f64>() / a.len() as f64;
        assert!(r.abs() < 0.03);
    }

    #[test]
    fn mixture_structure() {
        let m = gen_mixture4(4000, 1000, 0.3, RngHandle::new(5)).unwrap();
        assert_eq!((m.train.n(), m.test.n(), m.train.d()), (4000, 1000, 100));
        for j in 0..100 {
            assert!((0.0..=0.4).contains(&m.means[0][j]));
            assert_eq!(m.means[1][j], if j < 50 { m.means[0][j] } else { -m.means[0][j] });
            assert_eq!(m.means[2][j], -m.means[1][j]);
            assert_eq!(m.means[3][j], -m.means[0][j]);
        }
        // binomial sd at n = 4000, p = 1/4 is about 27 rows
        for rows in m.train.class_indices().unwrap() {
            assert!((rows.len() as f64 - 1000.0).abs() < 4.0 * 27.4);
        }
    }

    #[test]
    fn bayes_rule_beats_a_fitted_model() {
        let m = gen_mixture4(1000, 2000, 0.1, RngHandle::new(6)).unwrap();
        let bayes = m.bayes_classifier().unwrap().accuracy(&m.test);
        let params = LogisticParams {
            lambda: 0.01,
            ..Default::default()
        };
        let fit = fit_l1_logistic(&WeightedDesign::unit(&m.train), &params).unwrap();
        let labels = m.test.labels().unwrap();
        let pred = fit.predict(m.test.features()).unwrap();
        let acc = pred.iter().zip(labels).filter(|(a, b)| a == b).count() as f64 / m.test.n() as f64;
        assert!(bayes > acc, "bayes {bayes} vs fitted {acc}");
        assert!(acc > 0.5);
    }
}

//! One-vs-rest L1-penalized logistic regression.
//!
//! Each binary problem minimizes
//! `(1/Σw) Σ wᵢ [log(1 + exp(ηᵢ)) − yᵢ ηᵢ] + λ ‖β‖₁` with an unpenalized
//! intercept. Outer passes form the quadratic (working response) expansion
//! at the current fit; inner passes run cyclic coordinate descent on it with
//! soft-thresholding. A pass whose full step would raise the objective is
//! halved back towards the previous iterate.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::LearnerError;
use crate::numerics::{Matrix, Response, RngHandle, WeightedDesign};

/// Smallest curvature used in the working weights.
const MIN_CURVATURE: f64 = 1e-5;
/// Intercept given to a class absent from the training rows.
const ABSENT_LOGIT: f64 = -30.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub n_classes: usize,
    pub lambda: f64,
    /// One intercept per class.
    pub intercepts: Vec<f64>,
    /// One coefficient vector per class, on the original feature scale.
    pub coefficients: Vec<Vec<f64>>,
}

impl LogisticModel {
    pub fn dim(&self) -> usize {
        self.coefficients.first().map_or(0, Vec::len)
    }

    /// One-vs-rest probabilities, one per class (not normalized).
    pub fn class_probabilities(&self, x: &[f64]) -> Vec<f64> {
        self.intercepts
            .iter()
            .zip(&self.coefficients)
            .map(|(b0, beta)| sigmoid(b0 + x.iter().zip(beta).map(|(a, b)| a * b).sum::<f64>()))
            .collect()
    }

    pub fn predict_row(&self, x: &[f64]) -> usize {
        argmax(&self.class_probabilities(x))
    }

    pub fn predict(&self, x: &Matrix) -> Result<Vec<usize>, LearnerError> {
        super::check_dim(self.dim(), x.ncols())?;
        Ok(x.rows().map(|r| self.predict_row(r)).collect())
    }

    pub fn nonzero_count(&self) -> usize {
        self.coefficients.iter().flatten().filter(|b| **b != 0.0).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LogisticParams {
    pub lambda: f64,
    pub tol: f64,
    pub max_passes: usize,
    /// Fit on features scaled to weighted mean 0 and variance 1; coefficients
    /// are mapped back to the original scale.
    pub standardize: bool,
}

impl Default for LogisticParams {
    fn default() -> Self {
        Self {
            lambda: 0.0,
            tol: 1e-7,
            max_passes: 500,
            standardize: true,
        }
    }
}

/// How the penalty was chosen: the grid, the weighted holdout accuracy at
/// each grid value and the winner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaSelection {
    pub grid: Vec<f64>,
    pub holdout_accuracy: Vec<f64>,
    pub chosen: f64,
}

/// Binary solution on the (possibly standardized) working scale.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryFit {
    pub intercept: f64,
    pub beta: Vec<f64>,
    /// Penalized objective after each outer pass, starting with the initial
    /// point.
    pub history: Vec<f64>,
}

impl BinaryFit {
    pub fn objective(&self) -> f64 {
        *self.history.last().unwrap_or(&f64::NAN)
    }
}

/// Features in column-major order with normalized weights.
struct Problem {
    cols: Vec<Vec<f64>>,
    w: Vec<f64>,
    center: Vec<f64>,
    scale: Vec<f64>,
}

impl Problem {
    fn new(x: &Matrix, weights: &[f64], standardize: bool) -> Self {
        let m = x.nrows();
        let d = x.ncols();
        let total: f64 = weights.iter().sum();
        let w: Vec<f64> = weights.iter().map(|v| v / total).collect();
        let mut cols: Vec<Vec<f64>> = (0..d).map(|_| Vec::with_capacity(m)).collect();
        for r in x.rows() {
            for (c, v) in cols.iter_mut().zip(r) {
                c.push(*v);
            }
        }
        let mut center = vec![0.0; d];
        let mut scale = vec![1.0; d];
        if standardize {
            for (j, c) in cols.iter_mut().enumerate() {
                let mean: f64 = c.iter().zip(&w).map(|(v, w)| v * w).sum();
                let var: f64 = c.iter().zip(&w).map(|(v, w)| w * (v - mean) * (v - mean)).sum();
                let sd = var.sqrt();
                center[j] = mean;
                if sd > 0.0 {
                    scale[j] = sd;
                    c.iter_mut().for_each(|v| *v = (*v - mean) / sd);
                } else {
                    // constant column: nothing to learn from it
                    scale[j] = f64::INFINITY;
                    c.iter_mut().for_each(|v| *v = 0.0);
                }
            }
        }
        Self { cols, w, center, scale }
    }

    fn eta(&self, b0: f64, beta: &[f64]) -> Vec<f64> {
        let mut eta = vec![b0; self.w.len()];
        for (c, &b) in self.cols.iter().zip(beta) {
            if b != 0.0 {
                for (e, v) in eta.iter_mut().zip(c) {
                    *e += b * v;
                }
            }
        }
        eta
    }

    fn objective(&self, y: &[f64], eta: &[f64], beta: &[f64], lambda: f64) -> f64 {
        let loss: f64 = eta
            .iter()
            .zip(y)
            .zip(&self.w)
            .map(|((e, y), w)| w * (softplus(*e) - y * e))
            .sum();
        loss + lambda * beta.iter().map(|b| b.abs()).sum::<f64>()
    }

    fn lambda_max(&self, y: &[f64]) -> f64 {
        let ybar: f64 = y.iter().zip(&self.w).map(|(y, w)| y * w).sum();
        self.cols
            .iter()
            .map(|c| c.iter().zip(y).zip(&self.w).map(|((x, y), w)| w * x * (y - ybar)).sum::<f64>().abs())
            .fold(0.0, f64::max)
    }

    /// Maps working-scale coefficients to the original feature scale.
    fn unscale(&self, b0: f64, beta: &[f64]) -> (f64, Vec<f64>) {
        let raw: Vec<f64> = beta.iter().zip(&self.scale).map(|(b, s)| if *b == 0.0 { 0.0 } else { b / s }).collect();
        let shift: f64 = raw.iter().zip(&self.center).map(|(b, c)| b * c).sum();
        (b0 - shift, raw)
    }

    fn solve(
        &self,
        y: &[f64],
        lambda: f64,
        tol: f64,
        max_passes: usize,
        start: Option<(f64, &[f64])>,
    ) -> Result<BinaryFit, LearnerError> {
        let d = self.cols.len();
        let ybar: f64 = y.iter().zip(&self.w).map(|(y, w)| y * w).sum();
        if ybar <= 0.0 || ybar >= 1.0 {
            let b0 = if ybar <= 0.0 { ABSENT_LOGIT } else { -ABSENT_LOGIT };
            let beta = vec![0.0; d];
            let obj = self.objective(y, &self.eta(b0, &beta), &beta, lambda);
            return Ok(BinaryFit {
                intercept: b0,
                beta,
                history: vec![obj],
            });
        }
        let (mut b0, mut beta) = match start {
            Some((b, s)) => (b, s.to_vec()),
            None => ((ybar / (1.0 - ybar)).ln(), vec![0.0; d]),
        };
        let mut eta = self.eta(b0, &beta);
        let mut f = self.objective(y, &eta, &beta, lambda);
        let mut history = vec![f];
        let m = self.w.len();
        let mut v = vec![0.0; m];
        let mut r = vec![0.0; m];
        let mut xv = vec![0.0; d];
        let mut last_change = f64::INFINITY;
        for _ in 0..max_passes {
            for i in 0..m {
                let p = sigmoid(eta[i]);
                let q = (p * (1.0 - p)).max(MIN_CURVATURE);
                v[i] = self.w[i] * q;
                r[i] = (y[i] - p) / q;
            }
            let sv: f64 = v.iter().sum();
            for (j, c) in self.cols.iter().enumerate() {
                xv[j] = c.iter().zip(&v).map(|(x, v)| v * x * x).sum();
            }
            let (nb0, nbeta) = self.coordinate_descent(b0, &beta, &v, sv, &xv, &mut r, lambda, tol);

            // accept the full step or halve it until the objective does not rise
            let mut t = 1.0;
            let (mut cb0, mut cbeta) = (nb0, nbeta.clone());
            let mut ceta = self.eta(cb0, &cbeta);
            let mut cf = self.objective(y, &ceta, &cbeta, lambda);
            let slack = 1e-12 * f.abs().max(1.0);
            let mut halvings = 0;
            while cf > f + slack && halvings < 40 {
                t *= 0.5;
                halvings += 1;
                cb0 = b0 + t * (nb0 - b0);
                cbeta = beta.iter().zip(&nbeta).map(|(o, n)| o + t * (n - o)).collect();
                ceta = self.eta(cb0, &cbeta);
                cf = self.objective(y, &ceta, &cbeta, lambda);
            }
            if cf > f + slack {
                // no descent along the step: the current point is optimal to rounding
                return Ok(BinaryFit {
                    intercept: b0,
                    beta,
                    history,
                });
            }
            let change = std::iter::once((cb0 - b0).abs())
                .chain(cbeta.iter().zip(&beta).map(|(a, b)| (a - b).abs()))
                .fold(0.0, f64::max);
            b0 = cb0;
            beta = cbeta;
            eta = ceta;
            f = cf;
            history.push(f);
            last_change = change;
            if change < tol {
                return Ok(BinaryFit {
                    intercept: b0,
                    beta,
                    history,
                });
            }
        }
        Err(LearnerError::NoConvergence {
            passes: max_passes,
            gap: last_change,
        })
    }

    /// Cyclic coordinate descent on the weighted quadratic
    /// `½ Σ vᵢ (zᵢ − b0 − xᵢβ)² + λ‖β‖₁`, where `r = z − η` on entry.
    /// Sweeps the active set until stable, then checks every coordinate.
    #[allow(clippy::too_many_arguments)]
    fn coordinate_descent(
        &self,
        mut b0: f64,
        beta: &[f64],
        v: &[f64],
        sv: f64,
        xv: &[f64],
        r: &mut [f64],
        lambda: f64,
        tol: f64,
    ) -> (f64, Vec<f64>) {
        let mut beta = beta.to_vec();
        let inner_tol = 0.1 * tol;
        let max_sweeps = 10_000;
        let mut full = true;
        for _ in 0..max_sweeps {
            let mut max_delta = 0.0f64;
            let delta = r.iter().zip(v).map(|(r, v)| r * v).sum::<f64>() / sv;
            if delta != 0.0 {
                b0 += delta;
                r.iter_mut().for_each(|ri| *ri -= delta);
                max_delta = delta.abs();
            }
            for j in 0..beta.len() {
                if !full && beta[j] == 0.0 {
                    continue;
                }
                if xv[j] == 0.0 {
                    continue;
                }
                let col = &self.cols[j];
                let g = col.iter().zip(v).zip(r.iter()).map(|((x, v), r)| v * x * r).sum::<f64>() + xv[j] * beta[j];
                let new = soft_threshold(g, lambda) / xv[j];
                let step = new - beta[j];
                if step != 0.0 {
                    for (ri, x) in r.iter_mut().zip(col) {
                        *ri -= step * x;
                    }
                    beta[j] = new;
                    max_delta = max_delta.max(step.abs());
                }
            }
            if max_delta < inner_tol {
                if full {
                    break;
                }
                full = true;
            } else {
                full = false;
            }
        }
        (b0, beta)
    }
}

pub fn soft_threshold(z: f64, gamma: f64) -> f64 {
    if z > gamma {
        z - gamma
    } else if z < -gamma {
        z + gamma
    } else {
        0.0
    }
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (c, v) in p.iter().enumerate() {
        if *v > p[best] {
            best = c;
        }
    }
    best
}

fn class_targets(labels: &[usize], c: usize) -> Vec<f64> {
    labels.iter().map(|&l| if l == c { 1.0 } else { 0.0 }).collect()
}

fn labels_of(design: &WeightedDesign) -> Result<(&[usize], usize), LearnerError> {
    match design.responses() {
        Response::Class { labels, n_classes } => {
            let first = labels[0];
            if labels.iter().all(|&l| l == first) {
                return Err(LearnerError::SingleClass);
            }
            Ok((labels, *n_classes))
        }
        Response::Real(_) => Err(LearnerError::WrongTask("logistic regression needs class labels")),
    }
}

fn check_params(p: &LogisticParams) -> Result<(), LearnerError> {
    if !(p.lambda >= 0.0 && p.lambda.is_finite()) {
        return Err(LearnerError::InvalidParameter(format!("lambda must be >= 0, got {}", p.lambda)));
    }
    if !(p.tol > 0.0) || p.max_passes == 0 {
        return Err(LearnerError::InvalidParameter("tol must be > 0 and max passes >= 1".into()));
    }
    Ok(())
}

/// Solves one binary problem with labels in {0, 1}; exposed for testing the
/// solver against direct minimization.
pub fn fit_binary(
    x: &Matrix,
    y: &[f64],
    weights: &[f64],
    params: &LogisticParams,
) -> Result<(BinaryFit, f64, Vec<f64>), LearnerError> {
    check_params(params)?;
    let prob = Problem::new(x, weights, params.standardize);
    let fit = prob.solve(y, params.lambda, params.tol, params.max_passes, None)?;
    let (b0, beta) = prob.unscale(fit.intercept, &fit.beta);
    Ok((fit, b0, beta))
}

/// Fits every one-vs-rest problem at a fixed penalty.
pub fn fit_l1_logistic(design: &WeightedDesign, params: &LogisticParams) -> Result<LogisticModel, LearnerError> {
    check_params(params)?;
    let (labels, n_classes) = labels_of(design)?;
    let prob = Problem::new(design.points(), design.weights(), params.standardize);
    let mut intercepts = Vec::with_capacity(n_classes);
    let mut coefficients = Vec::with_capacity(n_classes);
    for c in 0..n_classes {
        let y = class_targets(labels, c);
        let fit = prob.solve(&y, params.lambda, params.tol, params.max_passes, None)?;
        let (b0, beta) = prob.unscale(fit.intercept, &fit.beta);
        intercepts.push(b0);
        coefficients.push(beta);
    }
    Ok(LogisticModel {
        n_classes,
        lambda: params.lambda,
        intercepts,
        coefficients,
    })
}

/// Penalized objective of every one-vs-rest problem at `model`, with the
/// penalty measured on the scale the fit used.
pub fn ovr_objectives(design: &WeightedDesign, model: &LogisticModel, standardize: bool) -> Result<Vec<f64>, LearnerError> {
    let (labels, n_classes) = labels_of(design)?;
    let prob = Problem::new(design.points(), design.weights(), standardize);
    let mut out = Vec::with_capacity(n_classes);
    for c in 0..n_classes {
        let y = class_targets(labels, c);
        // map back to the working scale
        let beta_w: Vec<f64> = model.coefficients[c].iter().zip(&prob.scale).map(|(b, s)| if s.is_finite() { b * s } else { 0.0 }).collect();
        let shift: f64 = model.coefficients[c].iter().zip(&prob.center).map(|(b, m)| b * m).sum();
        let b0_w = model.intercepts[c] + shift;
        let eta = prob.eta(b0_w, &beta_w);
        out.push(prob.objective(&y, &eta, &beta_w, model.lambda));
    }
    Ok(out)
}

/// Largest penalty at which some one-vs-rest problem has a nonzero slope.
pub fn lambda_max(design: &WeightedDesign, standardize: bool) -> Result<f64, LearnerError> {
    let (labels, n_classes) = labels_of(design)?;
    let prob = Problem::new(design.points(), design.weights(), standardize);
    Ok((0..n_classes)
        .map(|c| prob.lambda_max(&class_targets(labels, c)))
        .fold(0.0, f64::max))
}

/// Picks the penalty from `n_lambda` log-spaced values between `λmax` and
/// `min_ratio · λmax` by weighted accuracy on a random `holdout` fraction of
/// the design rows, then refits on all rows. Ties go to the larger penalty.
pub fn fit_l1_logistic_selected(
    design: &WeightedDesign,
    params: &LogisticParams,
    n_lambda: usize,
    min_ratio: f64,
    holdout: f64,
    rng: RngHandle,
) -> Result<(LogisticModel, LambdaSelection), LearnerError> {
    check_params(params)?;
    if n_lambda == 0 || !(min_ratio > 0.0 && min_ratio <= 1.0) || !(0.0..1.0).contains(&holdout) {
        return Err(LearnerError::InvalidParameter("bad lambda grid or holdout fraction".into()));
    }
    let (_, n_classes) = labels_of(design)?;
    let m = design.m();
    let mut idx: Vec<usize> = (0..m).collect();
    idx.shuffle(&mut rng.rng());
    let n_hold = (holdout * m as f64).round() as usize;
    let (hold_idx, train_idx) = idx.split_at(n_hold);
    let train = if n_hold == 0 { design.clone() } else { design.select(train_idx)? };
    let single = labels_of(&train).is_err();

    let lmax = lambda_max(if single { design } else { &train }, params.standardize)?;
    let grid: Vec<f64> = (0..n_lambda)
        .map(|i| {
            let t = if n_lambda == 1 { 0.0 } else { i as f64 / (n_lambda - 1) as f64 };
            lmax * min_ratio.powf(t)
        })
        .collect();

    let mut holdout_accuracy = vec![f64::NAN; n_lambda];
    let mut chosen = grid[n_lambda - 1];
    if n_hold > 0 && !single && m - n_hold >= 2 {
        let (labels, _) = labels_of(&train)?;
        let prob = Problem::new(train.points(), train.weights(), params.standardize);
        let mut warm: Vec<Option<(f64, Vec<f64>)>> = vec![None; n_classes];
        let hold = design.select(hold_idx)?;
        let hold_labels = match hold.responses() {
            Response::Class { labels, .. } => labels.clone(),
            Response::Real(_) => unreachable!(),
        };
        let mut best = f64::NEG_INFINITY;
        for (g, &lambda) in grid.iter().enumerate() {
            let mut model = LogisticModel {
                n_classes,
                lambda,
                intercepts: Vec::with_capacity(n_classes),
                coefficients: Vec::with_capacity(n_classes),
            };
            for c in 0..n_classes {
                let y = class_targets(labels, c);
                let start = warm[c].as_ref().map(|(b, s)| (*b, s.as_slice()));
                let fit = prob.solve(&y, lambda, params.tol, params.max_passes, start)?;
                let (b0, beta) = prob.unscale(fit.intercept, &fit.beta);
                warm[c] = Some((fit.intercept, fit.beta));
                model.intercepts.push(b0);
                model.coefficients.push(beta);
            }
            let pred = model.predict(hold.points())?;
            let total: f64 = hold.weights().iter().sum();
            let hit: f64 = pred
                .iter()
                .zip(&hold_labels)
                .zip(hold.weights())
                .filter(|((p, l), _)| p == l)
                .map(|(_, w)| w)
                .sum();
            let acc = hit / total;
            holdout_accuracy[g] = acc;
            if acc > best {
                best = acc;
                chosen = lambda;
            }
        }
    }
    let model = fit_l1_logistic(
        design,
        &LogisticParams {
            lambda: chosen,
            ..*params
        },
    )?;
    Ok((
        model,
        LambdaSelection {
            grid,
            holdout_accuracy,
            chosen,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn blobs(m: usize, d: usize, c: usize, seed: u64) -> WeightedDesign {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let labels: Vec<usize> = (0..m).map(|i| i % c).collect();
        let data: Vec<f64> = (0..m * d)
            .map(|k| {
                let (i, j) = (k / d, k % d);
                let shift = if j % c == labels[i] { 1.5 } else { 0.0 };
                rng.random::<f64>() * 2.0 - 1.0 + shift
            })
            .collect();
        let w = (0..m).map(|_| rng.random_range(1..4) as f64).collect();
        WeightedDesign::new(Matrix::from_vec(m, d, data).unwrap(), Response::Class { labels, n_classes: c }, w).unwrap()
    }

    #[test]
    fn soft_threshold_cases() {
        assert_eq!(soft_threshold(3.0, 1.0), 2.0);
        assert_eq!(soft_threshold(-3.0, 1.0), -2.0);
        assert_eq!(soft_threshold(0.5, 1.0), 0.0);
    }

    #[test]
    fn large_lambda_gives_null_model() {
        let d = blobs(200, 3, 2, 1);
        for standardize in [true, false] {
            let lmax = lambda_max(&d, standardize).unwrap();
            let model = fit_l1_logistic(
                &d,
                &LogisticParams {
                    lambda: lmax,
                    standardize,
                    ..Default::default()
                },
            )
            .unwrap();
            assert_eq!(model.nonzero_count(), 0);
            let labels = match d.responses() {
                Response::Class { labels, .. } => labels,
                _ => unreachable!(),
            };
            let total = d.total_weight();
            for c in 0..2 {
                let p: f64 = labels.iter().zip(d.weights()).filter(|(l, _)| **l == c).map(|(_, w)| w).sum::<f64>() / total;
                assert!((model.intercepts[c] - (p / (1.0 - p)).ln()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn null_model_with_zero_intercept_is_half() {
        let m = LogisticModel {
            n_classes: 2,
            lambda: 1.0,
            intercepts: vec![0.0, 0.0],
            coefficients: vec![vec![0.0; 2], vec![0.0; 2]],
        };
        assert_eq!(m.class_probabilities(&[3.0, -7.0]), vec![0.5, 0.5]);
    }

    /// Dense grid over the single slope; the intercept is profiled out by a
    /// nested golden-section search.
    fn grid_oracle(x: &[f64], y: &[f64], lambda: f64) -> f64 {
        let n = x.len() as f64;
        let obj = |b0: f64, b1: f64| {
            x.iter()
                .zip(y)
                .map(|(x, y)| {
                    let e = b0 + b1 * x;
                    softplus(e) - y * e
                })
                .sum::<f64>()
                / n
                + lambda * b1.abs()
        };
        let profile = |b1: f64| {
            let (mut lo, mut hi) = (-20.0f64, 20.0f64);
            let g = 0.5 * (5f64.sqrt() - 1.0);
            for _ in 0..120 {
                let a = hi - g * (hi - lo);
                let b = lo + g * (hi - lo);
                if obj(a, b1) < obj(b, b1) {
                    hi = b;
                } else {
                    lo = a;
                }
            }
            obj(0.5 * (lo + hi), b1)
        };
        // coarse pass over [-10, 10] at 1e-2, then the 1e-4 grid near the best
        let mut best = (f64::INFINITY, 0.0);
        for i in 0..=2000 {
            let b1 = -10.0 + i as f64 * 1e-2;
            let f = profile(b1);
            if f < best.0 {
                best = (f, b1);
            }
        }
        let centre = best.1;
        for i in -200..=200 {
            let b1 = centre + i as f64 * 1e-4;
            let f = profile(b1);
            if f < best.0 {
                best = (f, b1);
            }
        }
        best.1
    }

    #[test]
    fn one_feature_matches_grid_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..300).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
        let y: Vec<f64> = x
            .iter()
            .map(|&x| if rng.random::<f64>() < sigmoid(0.3 + 1.7 * x) { 1.0 } else { 0.0 })
            .collect();
        let xm = Matrix::from_vec(300, 1, x.clone()).unwrap();
        let params = LogisticParams {
            lambda: 0.1,
            tol: 1e-10,
            max_passes: 1000,
            standardize: false,
        };
        let (_, _, beta) = fit_binary(&xm, &y, &vec![1.0; 300], &params).unwrap();
        let oracle = grid_oracle(&x, &y, 0.1);
        assert!((beta[0] - oracle).abs() <= 1e-4, "cd {} grid {}", beta[0], oracle);
        assert!(beta[0] != 0.0);
    }

    #[test]
    fn objective_never_rises() {
        let d = blobs(300, 5, 2, 9);
        let labels = match d.responses() {
            Response::Class { labels, .. } => labels,
            _ => unreachable!(),
        };
        let y = class_targets(labels, 0);
        for lambda in [1e-3, 1e-2, 0.05] {
            let (fit, _, _) = fit_binary(
                d.points(),
                &y,
                d.weights(),
                &LogisticParams {
                    lambda,
                    ..Default::default()
                },
            )
            .unwrap();
            for w in fit.history.windows(2) {
                assert!(w[1] <= w[0] + 1e-10);
            }
        }
    }

    #[test]
    fn single_class_is_an_error() {
        let d = WeightedDesign::new(
            Matrix::from_rows(&[[1.0], [2.0]]).unwrap(),
            Response::Class {
                labels: vec![1, 1],
                n_classes: 2,
            },
            vec![1.0, 1.0],
        )
        .unwrap();
        assert!(matches!(fit_l1_logistic(&d, &LogisticParams::default()), Err(LearnerError::SingleClass)));
    }

    #[test]
    fn absent_class_is_never_predicted() {
        let d = blobs(120, 3, 2, 5);
        let labels = match d.responses() {
            Response::Class { labels, .. } => labels.clone(),
            _ => unreachable!(),
        };
        let wide =
            WeightedDesign::new(d.points().clone(), Response::Class { labels, n_classes: 3 }, d.weights().to_vec()).unwrap();
        let model = fit_l1_logistic(&wide, &LogisticParams::default()).unwrap();
        assert!(model.predict(wide.points()).unwrap().iter().all(|&p| p < 2));
        assert!(model.coefficients[2].iter().all(|&b| b == 0.0));
    }

    #[test]
    fn selection_picks_from_grid_and_separates() {
        let d = blobs(400, 4, 3, 2);
        let (model, sel) =
            fit_l1_logistic_selected(&d, &LogisticParams::default(), 20, 1e-3, 0.2, RngHandle::new(4)).unwrap();
        assert_eq!(sel.grid.len(), 20);
        assert!(sel.grid.contains(&sel.chosen));
        assert!(sel.holdout_accuracy.iter().all(|a| (0.0..=1.0).contains(a)));
        let pred = model.predict(d.points()).unwrap();
        let labels = match d.responses() {
            Response::Class { labels, .. } => labels,
            _ => unreachable!(),
        };
        let acc = pred.iter().zip(labels).filter(|(p, l)| p == l).count() as f64 / 400.0;
        assert!(acc > 0.8, "{acc}");
    }

    #[test]
    fn row_permutation_invariance() {
        let d = blobs(150, 3, 3, 6);
        let params = LogisticParams {
            lambda: 0.01,
            tol: 1e-12,
            ..Default::default()
        };
        let a = fit_l1_logistic(&d, &params).unwrap();
        let mut idx: Vec<usize> = (0..150).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(1));
        let b = fit_l1_logistic(&d.select(&idx).unwrap(), &params).unwrap();
        for c in 0..3 {
            assert!((a.intercepts[c] - b.intercepts[c]).abs() < 1e-10);
            for (x, y) in a.coefficients[c].iter().zip(&b.coefficients[c]) {
                assert!((x - y).abs() < 1e-10);
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        /// A one-coordinate problem solved by the CD update equals the
        /// closed-form soft-threshold minimizer, checked against a grid.
        #[test]
        fn coordinate_update_is_grid_minimizer(a in 0.1f64..5.0, g in -5.0f64..5.0, lambda in 0.0f64..3.0) {
            let closed = soft_threshold(g, lambda) / a;
            let q = |b: f64| 0.5 * a * b * b - g * b + lambda * b.abs();
            let mut best = (f64::INFINITY, 0.0);
            for i in -600_000..=600_000 {
                let b = i as f64 * 1e-4;
                let v = q(b);
                if v < best.0 { best = (v, b); }
            }
            prop_assert!((closed - best.1).abs() <= 1e-4);
        }
    }
}

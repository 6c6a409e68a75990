use super::{Matrix, NumericsError};

/// Relative size below which a column's residual norm marks it as dependent.
const RANK_TOL: f64 = 1e-10;

/// Weighted least squares by Householder QR.
///
/// Returns `argmin_beta sum_i w_i (b_i - a_i . beta)^2`. Rows are scaled by
/// `sqrt(w_i)` and the scaled system is triangularised with Householder
/// reflections; the normal equations are never formed.
pub fn solve_least_squares(a: &Matrix, b: &[f64], w: &[f64]) -> Result<Vec<f64>, NumericsError> {
    let (m, p) = (a.nrows(), a.ncols());
    if b.len() != m || w.len() != m {
        return Err(NumericsError::DimensionMismatch(format!(
            "{m} design rows, {} responses, {} weights",
            b.len(),
            w.len()
        )));
    }
    if p == 0 {
        return Ok(Vec::new());
    }
    if m < p {
        return Err(NumericsError::Underdetermined { rows: m, cols: p });
    }
    if let Some(i) = w.iter().position(|x| !(x.is_finite() && *x > 0.0)) {
        return Err(NumericsError::InvalidDesign(format!(
            "weight {} at row {i} is not positive",
            w[i]
        )));
    }

    // column-major copy of diag(sqrt w) A
    let mut cols: Vec<Vec<f64>> = (0..p)
        .map(|j| (0..m).map(|i| a.get(i, j) * w[i].sqrt()).collect())
        .collect();
    let mut rhs: Vec<f64> = b.iter().zip(w).map(|(bi, wi)| bi * wi.sqrt()).collect();
    let col_norms: Vec<f64> = cols.iter().map(|c| norm(c)).collect();
    let max_norm = col_norms.iter().cloned().fold(0.0, f64::max);

    let mut diag = vec![0.0; p];
    for j in 0..p {
        let alpha = norm(&cols[j][j..]);
        let floor = (RANK_TOL * col_norms[j]).max(m as f64 * f64::EPSILON * max_norm);
        if col_norms[j] == 0.0 || alpha <= floor {
            return Err(NumericsError::RankDeficient { column: j });
        }
        // v = x + sign(x0) |x| e0, stored in place of column j below the diagonal
        let x0 = cols[j][j];
        let r = if x0 >= 0.0 { -alpha } else { alpha };
        let mut v: Vec<f64> = cols[j][j..].to_vec();
        v[0] -= r;
        let vnorm2: f64 = v.iter().map(|t| t * t).sum();
        diag[j] = r;
        if vnorm2 > 0.0 {
            for col in cols.iter_mut().skip(j + 1) {
                reflect(&v, vnorm2, &mut col[j..]);
            }
            reflect(&v, vnorm2, &mut rhs[j..]);
        }
    }

    // back substitution on R beta = Q^T b
    let mut beta = vec![0.0; p];
    for j in (0..p).rev() {
        let mut s = rhs[j];
        for k in j + 1..p {
            s -= cols[k][j] * beta[k];
        }
        beta[j] = s / diag[j];
    }
    Ok(beta)
}

fn reflect(v: &[f64], vnorm2: f64, x: &mut [f64]) {
    let s: f64 = v.iter().zip(x.iter()).map(|(a, b)| a * b).sum();
    let f = 2.0 * s / vnorm2;
    for (xi, vi) in x.iter_mut().zip(v) {
        *xi -= f * vi;
    }
}

fn norm(x: &[f64]) -> f64 {
    // scaled to avoid overflow on large columns
    let scale = x.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    if scale == 0.0 {
        return 0.0;
    }
    scale * x.iter().map(|v| (v / scale).powi(2)).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    /// Independent route: normal equations solved by Gaussian elimination
    /// with partial pivoting on the row-replicated design.
    fn replicated_normal_equations(a: &Matrix, b: &[f64], reps: &[usize]) -> Vec<f64> {
        let p = a.ncols();
        let mut g = vec![vec![0.0; p + 1]; p];
        for i in 0..a.nrows() {
            for _ in 0..reps[i] {
                let r = a.row(i);
                for j in 0..p {
                    for k in 0..p {
                        g[j][k] += r[j] * r[k];
                    }
                    g[j][p] += r[j] * b[i];
                }
            }
        }
        for c in 0..p {
            let piv = (c..p).max_by(|&x, &y| g[x][c].abs().total_cmp(&g[y][c].abs())).unwrap();
            g.swap(c, piv);
            for r in 0..p {
                if r != c {
                    let f = g[r][c] / g[c][c];
                    for k in c..=p {
                        g[r][k] -= f * g[c][k];
                    }
                }
            }
        }
        (0..p).map(|j| g[j][p] / g[j][j]).collect()
    }

    #[test]
    fn identity_design() {
        let beta = solve_least_squares(&Matrix::identity(2), &[3.0, 5.0], &[1.0, 1.0]).unwrap();
        assert!((beta[0] - 3.0).abs() < 1e-14 && (beta[1] - 5.0).abs() < 1e-14);
    }

    #[test]
    fn weight_two_equals_duplicated_row() {
        let a = Matrix::from_rows(&[[1.0, 0.5], [1.0, 2.0], [1.0, -1.0]]).unwrap();
        let b = [1.0, 4.0, -2.5];
        let weighted = solve_least_squares(&a, &b, &[2.0, 1.0, 1.0]).unwrap();
        let dup = Matrix::from_rows(&[[1.0, 0.5], [1.0, 0.5], [1.0, 2.0], [1.0, -1.0]]).unwrap();
        let plain = solve_least_squares(&dup, &[1.0, 1.0, 4.0, -2.5], &[1.0; 4]).unwrap();
        for (x, y) in weighted.iter().zip(&plain) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn rank_deficiency_names_column() {
        let a = Matrix::from_rows(&[[1.0, 2.0, 1.0], [1.0, 4.0, 3.0], [1.0, 6.0, 5.0], [1.0, 1.0, 0.0]])
            .unwrap();
        // col2 = col1 - col0
        match solve_least_squares(&a, &[1.0, 2.0, 3.0, 4.0], &[1.0; 4]) {
            Err(NumericsError::RankDeficient { column }) => assert_eq!(column, 2),
            other => panic!("expected rank deficiency, got {other:?}"),
        }
        let zero = Matrix::from_rows(&[[1.0, 0.0], [2.0, 0.0], [3.0, 0.0]]).unwrap();
        assert!(matches!(
            solve_least_squares(&zero, &[1.0, 2.0, 3.0], &[1.0; 3]),
            Err(NumericsError::RankDeficient { column: 1 })
        ));
    }

    #[test]
    fn underdetermined_rejected() {
        let a = Matrix::from_rows(&[[1.0, 2.0]]).unwrap();
        assert!(matches!(
            solve_least_squares(&a, &[1.0], &[1.0]),
            Err(NumericsError::Underdetermined { .. })
        ));
    }

    #[test]
    fn residual_is_weighted_orthogonal() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let (m, p) = (60, 5);
        let a = Matrix::from_vec(m, p, (0..m * p).map(|_| rng.random::<f64>() * 10.0 - 5.0).collect())
            .unwrap();
        let b: Vec<f64> = (0..m).map(|_| rng.random::<f64>() * 100.0).collect();
        let w: Vec<f64> = (0..m).map(|_| 0.1 + rng.random::<f64>() * 3.0).collect();
        let beta = solve_least_squares(&a, &b, &w).unwrap();
        let fitted = a.matvec(&beta);
        for j in 0..p {
            let g: f64 = (0..m).map(|i| w[i] * a.get(i, j) * (b[i] - fitted[i])).sum();
            let scale: f64 = (0..m).map(|i| (w[i] * a.get(i, j) * b[i]).abs()).sum();
            assert!(g.abs() <= 1e-8 * scale, "column {j}: {g} vs scale {scale}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn replication_equivalence(seed in any::<u64>(), m in 4usize..30, p in 1usize..4) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let a = Matrix::from_vec(m, p, (0..m * p).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect()).unwrap();
            let b: Vec<f64> = (0..m).map(|_| rng.random::<f64>() * 10.0).collect();
            let reps: Vec<usize> = (0..m).map(|_| rng.random_range(1..=5)).collect();
            let w: Vec<f64> = reps.iter().map(|&r| r as f64).collect();
            let beta = solve_least_squares(&a, &b, &w).unwrap();
            let oracle = replicated_normal_equations(&a, &b, &reps);
            for (x, y) in beta.iter().zip(&oracle) {
                prop_assert!((x - y).abs() < 1e-10, "{x} vs {y}");
            }
        }
    }
}

//! Lloyd's K-means with k-means++ seeding.
//!
//! Assignment steps use Hamerly's bounds: each point keeps an upper bound on
//! the distance to its own centroid and a lower bound on the distance to any
//! other, so most points skip the full scan once centroids settle. The
//! iterates are those of plain Lloyd.

use rand::Rng;

use super::DmlError;
use crate::numerics::matrix::sq_dist;
use crate::numerics::Matrix;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansParams {
    pub k: usize,
    pub max_iters: usize,
    /// Stop once no centroid moves more than `tol` times the RMS spread of
    /// the data.
    pub tol: f64,
}

impl KMeansParams {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            max_iters: 100,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit {
    /// Each centroid is the mean of the rows assigned to it.
    pub centroids: Matrix,
    pub assignment: Vec<usize>,
    pub sizes: Vec<usize>,
    /// Within-group sum of squares after every assignment step.
    pub objective_history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl KMeansFit {
    pub fn objective(&self) -> f64 {
        *self.objective_history.last().unwrap_or(&0.0)
    }
}

pub fn kmeans<R: Rng + ?Sized>(points: &Matrix, params: &KMeansParams, rng: &mut R) -> Result<KMeansFit, DmlError> {
    let (n, d) = (points.nrows(), points.ncols());
    let k = params.k;
    if n == 0 {
        return Err(DmlError::EmptyInput);
    }
    if k == 0 || k > n {
        return Err(DmlError::InvalidK { k, n });
    }
    if k == n {
        // full-rate quantizer: every row is its own group
        return Ok(KMeansFit {
            centroids: points.clone(),
            assignment: (0..n).collect(),
            sizes: vec![1; n],
            objective_history: vec![0.0],
            iterations: 0,
            converged: true,
        });
    }

    let scale = rms_spread(points);
    let move_tol = params.tol * if scale > 0.0 { scale } else { 1.0 };
    let mut state = Lloyd::new(points, seed_plus_plus(points, k, rng));
    state.assign_full();
    let mut history = vec![state.objective()];
    let mut iterations = 0;
    let mut converged = false;
    loop {
        let max_move = state.update_centroids();
        if max_move <= move_tol {
            converged = true;
            break;
        }
        if iterations == params.max_iters {
            break;
        }
        iterations += 1;
        state.assign();
        history.push(state.objective());
    }
    debug_assert_eq!(d, state.centroids.ncols());
    Ok(KMeansFit {
        sizes: state.sizes.clone(),
        centroids: state.centroids,
        assignment: state.assign,
        objective_history: history,
        iterations,
        converged,
    })
}

/// Distance-weighted seeding: each new center is drawn with probability
/// proportional to its squared distance from the nearest chosen center.
fn seed_plus_plus<R: Rng + ?Sized>(points: &Matrix, k: usize, rng: &mut R) -> Matrix {
    let n = points.nrows();
    let mut chosen = vec![false; n];
    let mut centers = Matrix::zeros(0, points.ncols());
    let first = rng.random_range(0..n);
    chosen[first] = true;
    centers.push_row(points.row(first)).unwrap();
    let mut d2: Vec<f64> = points.rows().map(|r| sq_dist(r, points.row(first))).collect();
    while centers.nrows() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 {
                    pick = Some(i);
                    if target < w {
                        break;
                    }
                    target -= w;
                }
            }
            pick.unwrap()
        } else {
            // remaining rows duplicate chosen centers
            let free: Vec<usize> = (0..n).filter(|&i| !chosen[i]).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen[next] = true;
        centers.push_row(points.row(next)).unwrap();
        let c = points.row(next);
        for (i, r) in points.rows().enumerate() {
            let t = sq_dist(r, c);
            if t < d2[i] {
                d2[i] = t;
            }
        }
    }
    centers
}

fn rms_spread(points: &Matrix) -> f64 {
    let n = points.nrows() as f64;
    let d = points.ncols();
    let mut mean = vec![0.0; d];
    for r in points.rows() {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    (points.rows().map(|r| sq_dist(r, &mean)).sum::<f64>() / n).sqrt()
}

struct Lloyd<'a> {
    points: &'a Matrix,
    centroids: Matrix,
    assign: Vec<usize>,
    sizes: Vec<usize>,
    upper: Vec<f64>,
    lower: Vec<f64>,
    /// Half the distance from each centroid to its nearest other centroid.
    half_gap: Vec<f64>,
    stale: bool,
}

impl<'a> Lloyd<'a> {
    fn new(points: &'a Matrix, centroids: Matrix) -> Self {
        let n = points.nrows();
        let k = centroids.nrows();
        Self {
            points,
            centroids,
            assign: vec![0; n],
            sizes: vec![0; k],
            upper: vec![0.0; n],
            lower: vec![0.0; n],
            half_gap: vec![0.0; k],
            stale: true,
        }
    }

    fn k(&self) -> usize {
        self.centroids.nrows()
    }

    fn nearest_two(&self, x: &[f64]) -> (usize, f64, f64) {
        let (mut best, mut d1, mut d2) = (0, f64::INFINITY, f64::INFINITY);
        for (j, c) in self.centroids.rows().enumerate() {
            let t = sq_dist(x, c);
            if t < d1 {
                d2 = d1;
                d1 = t;
                best = j;
            } else if t < d2 {
                d2 = t;
            }
        }
        (best, d1.sqrt(), d2.sqrt())
    }

    fn assign_full(&mut self) {
        for i in 0..self.points.nrows() {
            let (j, d1, d2) = self.nearest_two(self.points.row(i));
            self.assign[i] = j;
            self.upper[i] = d1;
            self.lower[i] = d2;
        }
        self.recount();
        self.stale = false;
    }

    fn assign(&mut self) {
        if self.stale {
            self.assign_full();
            return;
        }
        let k = self.k();
        for j in 0..k {
            let mut m = f64::INFINITY;
            for j2 in 0..k {
                if j2 != j {
                    m = m.min(sq_dist(self.centroids.row(j), self.centroids.row(j2)));
                }
            }
            self.half_gap[j] = 0.5 * m.sqrt();
        }
        for i in 0..self.points.nrows() {
            let a = self.assign[i];
            let bound = self.half_gap[a].max(self.lower[i]);
            if self.upper[i] <= bound {
                continue;
            }
            let x = self.points.row(i);
            self.upper[i] = sq_dist(x, self.centroids.row(a)).sqrt();
            if self.upper[i] <= bound {
                continue;
            }
            let (j, d1, d2) = self.nearest_two(x);
            self.assign[i] = j;
            self.upper[i] = d1;
            self.lower[i] = d2;
        }
        self.recount();
    }

    fn recount(&mut self) {
        self.sizes.iter_mut().for_each(|s| *s = 0);
        for &a in &self.assign {
            self.sizes[a] += 1;
        }
    }

    fn objective(&self) -> f64 {
        self.points
            .rows()
            .zip(&self.assign)
            .map(|(x, &a)| sq_dist(x, self.centroids.row(a)))
            .sum()
    }

    /// Moves every centroid to the mean of its rows, repairing empty
    /// clusters. Returns the largest centroid displacement.
    fn update_centroids(&mut self) -> f64 {
        self.repair_empty();
        let (k, d) = (self.k(), self.centroids.ncols());
        let mut sums = Matrix::zeros(k, d);
        for (x, &a) in self.points.rows().zip(&self.assign) {
            for (s, v) in sums.row_mut(a).iter_mut().zip(x) {
                *s += v;
            }
        }
        let mut moves = vec![0.0; k];
        for j in 0..k {
            let inv = 1.0 / self.sizes[j] as f64;
            sums.row_mut(j).iter_mut().for_each(|s| *s *= inv);
            moves[j] = sq_dist(sums.row(j), self.centroids.row(j)).sqrt();
        }
        self.centroids = sums;

        let (mut top, mut second, mut top_j) = (0.0f64, 0.0f64, usize::MAX);
        for (j, &m) in moves.iter().enumerate() {
            if m > top {
                second = top;
                top = m;
                top_j = j;
            } else if m > second {
                second = m;
            }
        }
        for i in 0..self.points.nrows() {
            let a = self.assign[i];
            self.upper[i] += moves[a];
            self.lower[i] -= if a == top_j { second } else { top };
        }
        top
    }

    /// Reseeds each empty cluster at the row farthest from its centroid,
    /// taken from a cluster that keeps at least one row.
    fn repair_empty(&mut self) {
        while let Some(empty) = self.sizes.iter().position(|&s| s == 0) {
            let mut far = None;
            let mut far_d = -1.0;
            for (i, x) in self.points.rows().enumerate() {
                let a = self.assign[i];
                if self.sizes[a] < 2 {
                    continue;
                }
                let t = sq_dist(x, self.centroids.row(a));
                if t > far_d {
                    far_d = t;
                    far = Some(i);
                }
            }
            // k <= n guarantees a donor cluster with two or more rows
            let i = far.expect("empty cluster with no donor");
            self.sizes[self.assign[i]] -= 1;
            self.assign[i] = empty;
            self.sizes[empty] = 1;
            self.centroids.row_mut(empty).copy_from_slice(self.points.row(i));
            self.stale = true;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Exhaustive oracle: best SSE over every assignment of 1-D points to two
    /// nonempty groups.
    fn best_two_partition(xs: &[f64]) -> (f64, Vec<f64>) {
        let n = xs.len();
        let mut best = (f64::INFINITY, vec![]);
        for mask in 1..(1u32 << n) - 1 {
            let (mut a, mut b) = (vec![], vec![]);
            for (i, &x) in xs.iter().enumerate() {
                if mask & (1 << i) != 0 { a.push(x) } else { b.push(x) }
            }
            let sse = |g: &[f64]| {
                let m = g.iter().sum::<f64>() / g.len() as f64;
                (g.iter().map(|x| (x - m).powi(2)).sum::<f64>(), m)
            };
            let ((sa, ma), (sb, mb)) = (sse(&a), sse(&b));
            if sa + sb < best.0 {
                let mut c = vec![ma, mb];
                c.sort_by(f64::total_cmp);
                best = (sa + sb, c);
            }
        }
        best
    }

    #[test]
    fn two_clusters_match_exhaustive_search() {
        let xs = [0.0, 1.0, 2.0, 10.0, 11.0, 12.0];
        let (oracle_sse, oracle_c) = best_two_partition(&xs);
        assert_eq!(oracle_c, vec![1.0, 11.0]);
        let pts = Matrix::from_vec(6, 1, xs.to_vec()).unwrap();
        for seed in 0..20 {
            let fit = kmeans(&pts, &KMeansParams::new(2), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let mut c = fit.centroids.column(0);
            c.sort_by(f64::total_cmp);
            assert_eq!(c, oracle_c);
            assert_eq!(fit.sizes, vec![3, 3]);
            assert!((fit.objective() - oracle_sse).abs() < 1e-12);
        }
    }

    #[test]
    fn k_equals_n_is_lossless() {
        let pts = Matrix::from_rows(&[[0.0, 1.0], [2.0, 3.0], [4.0, 5.0]]).unwrap();
        let fit = kmeans(&pts, &KMeansParams::new(3), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(fit.centroids, pts);
        assert_eq!(fit.sizes, vec![1, 1, 1]);
        assert_eq!(fit.objective(), 0.0);
    }

    #[test]
    fn bad_k() {
        let pts = Matrix::from_rows(&[[0.0], [1.0]]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(kmeans(&pts, &KMeansParams::new(3), &mut rng), Err(DmlError::InvalidK { .. })));
        assert!(matches!(kmeans(&pts, &KMeansParams::new(0), &mut rng), Err(DmlError::InvalidK { .. })));
        assert!(matches!(
            kmeans(&Matrix::zeros(0, 1), &KMeansParams::new(1), &mut rng),
            Err(DmlError::EmptyInput)
        ));
    }

    #[test]
    fn duplicates_still_give_nonempty_groups() {
        let pts = Matrix::from_rows(&[[1.0], [1.0], [1.0], [1.0], [5.0]]).unwrap();
        let fit = kmeans(&pts, &KMeansParams::new(3), &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert!(fit.sizes.iter().all(|&s| s >= 1));
        assert_eq!(fit.sizes.iter().sum::<usize>(), 5);
    }

    fn brute_lloyd_step(points: &Matrix, centroids: &Matrix) -> Vec<usize> {
        points
            .rows()
            .map(|x| {
                (0..centroids.nrows())
                    .min_by(|&a, &b| sq_dist(x, centroids.row(a)).total_cmp(&sq_dist(x, centroids.row(b))))
                    .unwrap()
            })
            .collect()
    }

    #[test]
    fn monotone_objective_and_consistent_groups() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pts = Matrix::from_vec(2000, 3, (0..6000).map(|_| rng.random::<f64>()).collect()).unwrap();
        let fit = kmeans(&pts, &KMeansParams::new(40), &mut rng).unwrap();
        for w in fit.objective_history.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12), "{} -> {}", w[0], w[1]);
        }
        // centroids are the means of their groups
        for j in 0..40 {
            let rows: Vec<usize> = (0..2000).filter(|&i| fit.assignment[i] == j).collect();
            assert_eq!(rows.len(), fit.sizes[j]);
            for c in 0..3 {
                let m = rows.iter().map(|&i| pts.get(i, c)).sum::<f64>() / rows.len() as f64;
                assert!((m - fit.centroids.get(j, c)).abs() < 1e-12);
            }
        }
        if fit.converged {
            // at convergence the bounded assignment agrees with a brute-force scan
            let brute = brute_lloyd_step(&pts, &fit.centroids);
            let mismatched = brute.iter().zip(&fit.assignment).filter(|(a, b)| a != b).count();
            assert!(mismatched <= 2, "{mismatched} rows disagree");
        }
    }
}

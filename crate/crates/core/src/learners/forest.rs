//! Random forest classifier on a weighted design.
//!
//! Each tree sees a bootstrap of `round(Σw)` draws, row `i` drawn with
//! probability `wᵢ / Σw`, so an integer-weighted design behaves like its
//! row-replicated expansion. Drawn rows are kept as multiplicity counts.
//! Trees grow until nodes are pure or no sampled feature separates them.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::LearnerError;
use crate::numerics::{Matrix, Response, RngHandle, WeightedDesign};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ForestNode {
    Split {
        feature: usize,
        threshold: f64,
        left: u32,
        right: u32,
    },
    Leaf {
        /// Bootstrap counts per class.
        histogram: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    /// Node 0 is the root; `x[feature] < threshold` goes left.
    pub nodes: Vec<ForestNode>,
}

impl DecisionTree {
    fn leaf(&self, x: &[f64]) -> &[f64] {
        let mut n = 0usize;
        loop {
            match &self.nodes[n] {
                ForestNode::Leaf { histogram } => return histogram,
                ForestNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => n = if x[*feature] < *threshold { *left } else { *right } as usize,
            }
        }
    }

    pub fn predict_row(&self, x: &[f64]) -> usize {
        argmax(self.leaf(x))
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, ForestNode::Leaf { .. })).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub n_classes: usize,
    pub dim: usize,
    pub mtry: usize,
    pub rng: RngHandle,
    pub trees: Vec<DecisionTree>,
}

impl Forest {
    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn votes(&self, x: &[f64]) -> Vec<usize> {
        let mut votes = vec![0usize; self.n_classes];
        for t in &self.trees {
            votes[t.predict_row(x)] += 1;
        }
        votes
    }

    /// Plurality vote; ties go to the smallest class index.
    pub fn predict_row(&self, x: &[f64]) -> usize {
        let votes = self.votes(x);
        let mut best = 0;
        for (c, &v) in votes.iter().enumerate() {
            if v > votes[best] {
                best = c;
            }
        }
        best
    }

    pub fn predict(&self, x: &Matrix) -> Result<Vec<usize>, LearnerError> {
        super::check_dim(self.dim, x.ncols())?;
        Ok(x.rows().map(|r| self.predict_row(r)).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub trees: usize,
    pub mtry: usize,
}

/// A chosen split and the weighted Gini impurity of its children,
/// `N_L·G_L + N_R·G_R`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Split {
    pub feature: usize,
    pub threshold: f64,
    pub impurity: f64,
}

fn argmax(h: &[f64]) -> usize {
    let mut best = 0;
    for (c, v) in h.iter().enumerate() {
        if *v > h[best] {
            best = c;
        }
    }
    best
}

#[cfg(test)]
fn gini_mass(h: &[f64], total: f64) -> f64 {
    if total <= 0.0 {
        return 0.0;
    }
    total - h.iter().map(|c| c * c).sum::<f64>() / total
}

/// Best split of `rows` over `features` by weighted Gini impurity, with
/// thresholds at midpoints of consecutive distinct values. Among equal
/// impurities the earlier feature in `features`, then the smaller threshold,
/// wins. `None` when no listed feature takes two distinct values.
pub fn best_split(
    points: &Matrix,
    labels: &[usize],
    counts: &[f64],
    n_classes: usize,
    rows: &[usize],
    features: &[usize],
) -> Option<Split> {
    let mut scratch = Vec::with_capacity(rows.len());
    let mut left = vec![0.0; n_classes];
    let mut total = vec![0.0; n_classes];
    for &i in rows {
        total[labels[i]] += counts[i];
    }
    let n: f64 = total.iter().sum();
    let mut best: Option<Split> = None;
    for &f in features {
        scratch.clear();
        scratch.extend(rows.iter().map(|&i| (points.get(i, f), i)));
        scratch.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
        if scratch[0].0 == scratch[scratch.len() - 1].0 {
            continue;
        }
        left.iter_mut().for_each(|v| *v = 0.0);
        let mut nl = 0.0;
        for k in 0..scratch.len() - 1 {
            let (x, i) = scratch[k];
            left[labels[i]] += counts[i];
            nl += counts[i];
            let next = scratch[k + 1].0;
            if next == x {
                continue;
            }
            let right: f64 = total.iter().zip(&left).map(|(t, l)| (t - l) * (t - l)).sum();
            let nr = n - nl;
            let impurity = nl - left.iter().map(|c| c * c).sum::<f64>() / nl + (nr - right / nr);
            if best.is_none_or(|b| impurity < b.impurity - 1e-12 * n) {
                best = Some(Split {
                    feature: f,
                    threshold: 0.5 * (x + next),
                    impurity,
                });
            }
        }
    }
    best
}

/// Draws `round(Σw)` rows with probability proportional to weight and
/// returns the draw count of every row.
pub fn weighted_bootstrap<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> Vec<f64> {
    let draws = weights.iter().sum::<f64>().round().max(1.0) as usize;
    let mut counts = vec![0.0; weights.len()];
    let dist = WeightedIndex::new(weights).expect("design weights are positive");
    for _ in 0..draws {
        counts[dist.sample(rng)] += 1.0;
    }
    counts
}

fn grow<R: Rng + ?Sized>(
    points: &Matrix,
    labels: &[usize],
    counts: &[f64],
    n_classes: usize,
    mtry: usize,
    rng: &mut R,
) -> DecisionTree {
    let d = points.ncols();
    let rows: Vec<usize> = (0..counts.len()).filter(|&i| counts[i] > 0.0).collect();
    let mut nodes = vec![ForestNode::Leaf { histogram: Vec::new() }];
    let mut stack = vec![(0usize, rows)];
    while let Some((slot, rows)) = stack.pop() {
        let mut histogram = vec![0.0; n_classes];
        for &i in &rows {
            histogram[labels[i]] += counts[i];
        }
        let pure = histogram.iter().filter(|c| **c > 0.0).count() <= 1;
        let split = if pure || rows.len() < 2 {
            None
        } else {
            let drawn: Vec<usize> = sample(rng, d, mtry).into_vec();
            best_split(points, labels, counts, n_classes, &rows, &drawn).or_else(|| {
                // the sampled features are constant here; try the others
                let mut rest: Vec<usize> = (0..d).filter(|f| !drawn.contains(f)).collect();
                let order = sample(rng, rest.len(), rest.len()).into_vec();
                rest = order.into_iter().map(|k| rest[k]).collect();
                rest.into_iter()
                    .find_map(|f| best_split(points, labels, counts, n_classes, &rows, &[f]))
            })
        };
        match split {
            None => nodes[slot] = ForestNode::Leaf { histogram },
            Some(s) => {
                let (l, r): (Vec<usize>, Vec<usize>) =
                    rows.iter().partition(|&&i| points.get(i, s.feature) < s.threshold);
                let left = nodes.len();
                nodes.push(ForestNode::Leaf { histogram: Vec::new() });
                nodes.push(ForestNode::Leaf { histogram: Vec::new() });
                nodes[slot] = ForestNode::Split {
                    feature: s.feature,
                    threshold: s.threshold,
                    left: left as u32,
                    right: (left + 1) as u32,
                };
                stack.push((left + 1, r));
                stack.push((left, l));
            }
        }
    }
    DecisionTree { nodes }
}

/// Grows `params.trees` trees, tree `t` on its own stream `rng.fork(t)`.
pub fn fit_forest(design: &WeightedDesign, params: &ForestParams, rng: RngHandle) -> Result<Forest, LearnerError> {
    let (labels, n_classes) = match design.responses() {
        Response::Class { labels, n_classes } => (labels.as_slice(), *n_classes),
        Response::Real(_) => return Err(LearnerError::WrongTask("random forest needs class labels")),
    };
    let d = design.d();
    if params.mtry == 0 || params.mtry > d {
        return Err(LearnerError::InvalidParameter(format!(
            "mtry must be in 1..={d}, got {}",
            params.mtry
        )));
    }
    if params.trees == 0 {
        return Err(LearnerError::InvalidParameter("forest needs at least one tree".into()));
    }
    let trees = (0..params.trees)
        .into_par_iter()
        .map(|t| {
            let mut r = rng.fork(t as u64).rng();
            let counts = weighted_bootstrap(design.weights(), &mut r);
            grow(design.points(), labels, &counts, n_classes, params.mtry, &mut r)
        })
        .collect();
    Ok(Forest {
        n_classes,
        dim: d,
        mtry: params.mtry,
        rng,
        trees,
    })
}

/// `⌊√d⌋`, at least 1.
pub fn default_mtry(d: usize) -> usize {
    ((d as f64).sqrt().floor() as usize).max(1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn class_design(rows: &[&[f64]], labels: &[usize], c: usize) -> WeightedDesign {
        WeightedDesign::new(
            Matrix::from_rows(rows).unwrap(),
            Response::Class {
                labels: labels.to_vec(),
                n_classes: c,
            },
            vec![1.0; labels.len()],
        )
        .unwrap()
    }

    fn accuracy(f: &Forest, d: &WeightedDesign) -> f64 {
        let labels = match d.responses() {
            Response::Class { labels, .. } => labels,
            _ => unreachable!(),
        };
        let p = f.predict(d.points()).unwrap();
        p.iter().zip(labels).filter(|(a, b)| a == b).count() as f64 / labels.len() as f64
    }

    #[test]
    fn xor_is_shattered() {
        let d = class_design(&[&[0.0, 0.0], &[1.0, 1.0], &[0.0, 1.0], &[1.0, 0.0]], &[0, 0, 1, 1], 2);
        // replicate so every bootstrap is likely to hold all four corners
        let d = WeightedDesign::new(d.points().clone(), d.responses().clone(), vec![25.0; 4]).unwrap();
        let f = fit_forest(&d, &ForestParams { trees: 25, mtry: 2 }, RngHandle::new(7)).unwrap();
        assert_eq!(accuracy(&f, &d), 1.0);
        assert_eq!(f.n_trees(), 25);
    }

    #[test]
    fn pure_training_set() {
        let d = class_design(&[&[0.0], &[1.0], &[2.0]], &[1, 1, 1], 3);
        let f = fit_forest(&d, &ForestParams { trees: 5, mtry: 1 }, RngHandle::new(0)).unwrap();
        assert!(f.trees.iter().all(|t| t.leaf_count() == 1));
        assert_eq!(accuracy(&f, &d), 1.0);
    }

    #[test]
    fn identical_one_leaf_trees_vote_their_label() {
        let tree = DecisionTree {
            nodes: vec![ForestNode::Leaf {
                histogram: vec![0.0, 0.0, 4.0],
            }],
        };
        let f = Forest {
            n_classes: 3,
            dim: 2,
            mtry: 1,
            rng: RngHandle::new(0),
            trees: vec![tree; 7],
        };
        assert_eq!(f.predict(&Matrix::from_rows(&[[9.0, -1.0], [0.0, 0.0]]).unwrap()).unwrap(), vec![2, 2]);
        assert!(f.predict(&Matrix::zeros(1, 3)).is_err());
    }

    #[test]
    fn tie_goes_to_smallest_class() {
        let leaf = |c: usize| DecisionTree {
            nodes: vec![ForestNode::Leaf {
                histogram: (0..3).map(|k| if k == c { 1.0 } else { 0.0 }).collect(),
            }],
        };
        let f = Forest {
            n_classes: 3,
            dim: 1,
            mtry: 1,
            rng: RngHandle::new(0),
            trees: vec![leaf(2), leaf(1), leaf(2), leaf(1)],
        };
        assert_eq!(f.predict_row(&[0.0]), 1);
    }

    #[test]
    fn mtry_bounds() {
        let d = class_design(&[&[0.0], &[1.0]], &[0, 1], 2);
        assert!(fit_forest(&d, &ForestParams { trees: 1, mtry: 2 }, RngHandle::new(0)).is_err());
        assert!(fit_forest(&d, &ForestParams { trees: 1, mtry: 0 }, RngHandle::new(0)).is_err());
    }

    #[test]
    fn bootstrap_draws_total_weight() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let counts = weighted_bootstrap(&[3.0, 1.0, 4.0, 2.0], &mut rng);
        assert_eq!(counts.iter().sum::<f64>(), 10.0);
    }

    #[test]
    fn bootstrap_frequencies_follow_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let w = [1.0, 3.0];
        let mut tot = [0.0; 2];
        for _ in 0..5000 {
            let c = weighted_bootstrap(&w, &mut rng);
            tot[0] += c[0];
            tot[1] += c[1];
        }
        let frac = tot[1] / (tot[0] + tot[1]);
        assert!((frac - 0.75).abs() < 0.01, "{frac}");
    }

    /// Impurity of every (feature, threshold) candidate computed by direct
    /// counting; returns the minimum.
    fn exhaustive(points: &Matrix, labels: &[usize], counts: &[f64], c: usize, rows: &[usize], feats: &[usize]) -> Option<f64> {
        let mut best: Option<f64> = None;
        for &f in feats {
            let mut vals: Vec<f64> = rows.iter().map(|&i| points.get(i, f)).collect();
            vals.sort_by(f64::total_cmp);
            vals.dedup();
            for w in vals.windows(2) {
                let t = 0.5 * (w[0] + w[1]);
                let mut hl = vec![0.0; c];
                let mut hr = vec![0.0; c];
                for &i in rows {
                    if points.get(i, f) < t {
                        hl[labels[i]] += counts[i];
                    } else {
                        hr[labels[i]] += counts[i];
                    }
                }
                let g = |h: &[f64]| {
                    let n: f64 = h.iter().sum();
                    n * (1.0 - h.iter().map(|x| (x / n) * (x / n)).sum::<f64>())
                };
                let imp = g(&hl) + g(&hr);
                best = Some(best.map_or(imp, |b: f64| b.min(imp)));
            }
        }
        best
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn split_is_gini_optimal(n in 2usize..50, d in 1usize..5, c in 2usize..4, seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            // coarse values force ties between rows
            let pts = Matrix::from_vec(n, d, (0..n * d).map(|_| rng.random_range(0..6) as f64).collect()).unwrap();
            let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
            let counts: Vec<f64> = (0..n).map(|_| rng.random_range(1..4) as f64).collect();
            let rows: Vec<usize> = (0..n).collect();
            let feats: Vec<usize> = (0..d).collect();
            let got = best_split(&pts, &labels, &counts, c, &rows, &feats);
            let want = exhaustive(&pts, &labels, &counts, c, &rows, &feats);
            match (got, want) {
                (None, None) => {}
                (Some(s), Some(w)) => {
                    prop_assert!((s.impurity - w).abs() < 1e-9, "{} vs {}", s.impurity, w);
                    let mut hl = vec![0.0; c];
                    let mut hr = vec![0.0; c];
                    for &i in &rows {
                        if pts.get(i, s.feature) < s.threshold { hl[labels[i]] += counts[i] } else { hr[labels[i]] += counts[i] }
                    }
                    let direct = gini_mass(&hl, hl.iter().sum()) + gini_mass(&hr, hr.iter().sum());
                    prop_assert!((direct - s.impurity).abs() < 1e-9);
                }
                _ => prop_assert!(false, "disagreement on split existence"),
            }
        }
    }

    #[test]
    fn leaves_partition_bootstrap() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 200;
        let pts = Matrix::from_vec(n, 3, (0..n * 3).map(|_| rng.random::<f64>()).collect()).unwrap();
        let labels: Vec<usize> = (0..n).map(|i| usize::from(pts.get(i, 0) + pts.get(i, 1) > 1.0)).collect();
        let counts = weighted_bootstrap(&vec![1.0; n], &mut rng);
        let tree = grow(&pts, &labels, &counts, 2, 2, &mut rng);
        let mut leaf_total = 0.0;
        for node in &tree.nodes {
            if let ForestNode::Leaf { histogram } = node {
                let t: f64 = histogram.iter().sum();
                assert!(t > 0.0);
                assert_eq!(histogram.iter().filter(|c| **c > 0.0).count(), 1);
                leaf_total += t;
            }
        }
        assert_eq!(leaf_total, n as f64);
    }
}

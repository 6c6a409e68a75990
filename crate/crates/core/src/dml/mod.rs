//! Distortion-minimizing local transforms: compress a site's rows into a
//! weighted [`Signature`] by K-means quantization or median-cut trees.
//!
//! Grouping always runs on features only. Response summaries are computed
//! per group afterwards. For classification the transform runs separately
//! inside each class by default, so every rep carries a pure label.

mod kmeans;
mod signature;
mod tree;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::matrix::sq_dist;
use crate::numerics::{Dataset, NumericsError, RngHandle};

pub use kmeans::{kmeans, KMeansFit, KMeansParams};
pub use signature::{pool, Rep, Signature, TransformDescriptor};
pub use tree::{PartitionTree, SplitDirection, Standardization, TreeNode, TreeVariant};

#[derive(Debug, Error)]
pub enum DmlError {
    #[error("empty input")]
    EmptyInput,
    #[error("invalid cluster count k={k} for n={n} rows")]
    InvalidK { k: usize, n: usize },
    #[error("invalid signature: {0}")]
    InvalidSignature(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("corrupt tree: {0}")]
    CorruptTree(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DmlKind {
    Kmeans,
    Kdtree,
    Rptree,
}

impl std::str::FromStr for DmlKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "kmeans" => Ok(Self::Kmeans),
            "kdtree" => Ok(Self::Kdtree),
            "rptree" => Ok(Self::Rptree),
            other => Err(format!("unknown transform '{other}' (expected kmeans, kdtree or rptree)")),
        }
    }
}

impl std::fmt::Display for DmlKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Kmeans => "kmeans",
            Self::Kdtree => "kdtree",
            Self::Rptree => "rptree",
        })
    }
}

/// How class labels are handled for classification data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassMode {
    /// One transform per class; every rep has a pure label.
    #[default]
    Stratified,
    /// One transform over all rows; each rep takes its group's majority label.
    Pooled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DmlConfig {
    pub kind: DmlKind,
    /// Target rows per rep. K-means uses `k = ceil(n / ratio)`; trees use
    /// `max_leaf = round(ratio)`, which yields leaves of between half and
    /// the full ratio.
    pub ratio: f64,
    pub class_mode: ClassMode,
    /// Standardize features before random projection (rp trees only).
    pub standardize: bool,
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for DmlConfig {
    fn default() -> Self {
        Self {
            kind: DmlKind::Kmeans,
            ratio: 40.0,
            class_mode: ClassMode::Stratified,
            standardize: false,
            max_iters: 100,
            tol: 1e-6,
        }
    }
}

impl DmlConfig {
    pub fn new(kind: DmlKind, ratio: f64) -> Self {
        Self {
            kind,
            ratio,
            ..Self::default()
        }
    }

    fn check(&self) -> Result<(), DmlError> {
        if !(self.ratio >= 1.0 && self.ratio.is_finite()) {
            return Err(DmlError::InvalidParameter(format!("ratio must be >= 1, got {}", self.ratio)));
        }
        if !(self.tol >= 0.0) {
            return Err(DmlError::InvalidParameter("tol must be non-negative".into()));
        }
        Ok(())
    }

    fn max_leaf(&self) -> usize {
        (self.ratio.round() as usize).max(1)
    }
}

/// Number of reps for `n` rows at compression `ratio`.
pub fn reps_for_ratio(n: usize, ratio: f64) -> usize {
    ((n as f64 / ratio).ceil() as usize).clamp(1, n.max(1))
}

/// Compresses `data` into a signature according to `cfg`.
pub fn compress(data: &Dataset, cfg: &DmlConfig, site_id: &str, rng: RngHandle) -> Result<Signature, DmlError> {
    cfg.check()?;
    let strata = strata(data, cfg.class_mode);
    let (groups, transform) = match cfg.kind {
        DmlKind::Kmeans => {
            let ks: Vec<usize> = strata.iter().map(|rows| reps_for_ratio(rows.len(), cfg.ratio)).collect();
            let k = ks.iter().sum();
            (kmeans_groups(data, &strata, &ks, cfg.max_iters, cfg.tol, rng)?, TransformDescriptor::KMeans { k })
        }
        DmlKind::Kdtree | DmlKind::Rptree => {
            let max_leaf = cfg.max_leaf();
            let (variant, transform) = if cfg.kind == DmlKind::Kdtree {
                (TreeVariant::KdMedian, TransformDescriptor::KdTree { max_leaf })
            } else {
                (TreeVariant::RpMedian, TransformDescriptor::RpTree { max_leaf })
            };
            let mut groups = Vec::new();
            for (c, rows) in strata.iter().enumerate() {
                let tree = PartitionTree::build(
                    data.features(),
                    rows,
                    variant,
                    max_leaf,
                    cfg.standardize,
                    &mut rng.fork(c as u64).rng(),
                )?;
                groups.extend(tree.leaves().into_iter().map(<[usize]>::to_vec));
            }
            (groups, transform)
        }
    };
    finish(data, site_id, transform, rng, &groups)
}

/// K-means signature with `k` reps in total. In stratified mode `k` is
/// shared among classes in proportion to their sizes, at least one each.
pub fn kmeans_signature(
    data: &Dataset,
    k: usize,
    rng: RngHandle,
    max_iters: usize,
    tol: f64,
    class_mode: ClassMode,
) -> Result<Signature, DmlError> {
    let n = data.n();
    if k == 0 || k > n {
        return Err(DmlError::InvalidK { k, n });
    }
    let strata = strata(data, class_mode);
    let sizes: Vec<usize> = strata.iter().map(Vec::len).collect();
    let ks = allocate(k, &sizes)?;
    let groups = kmeans_groups(data, &strata, &ks, max_iters, tol, rng)?;
    finish(data, "", TransformDescriptor::KMeans { k }, rng, &groups)
}

/// Builds a tree over all rows of `data`.
pub fn build_tree(
    data: &Dataset,
    variant: TreeVariant,
    max_leaf: usize,
    standardize: bool,
    rng: RngHandle,
) -> Result<PartitionTree, DmlError> {
    let rows: Vec<usize> = (0..data.n()).collect();
    PartitionTree::build(data.features(), &rows, variant, max_leaf, standardize, &mut rng.rng())
}

/// One rep per leaf of `tree`. For classification each rep takes its leaf's
/// majority label; build one tree per class to keep labels pure.
pub fn tree_signature(tree: &PartitionTree, data: &Dataset, rng: RngHandle) -> Result<Signature, DmlError> {
    if tree.dim != data.d() {
        return Err(DmlError::DimensionMismatch {
            expected: data.d(),
            found: tree.dim,
        });
    }
    let groups: Vec<Vec<usize>> = tree.leaves().into_iter().map(<[usize]>::to_vec).collect();
    let transform = match tree.variant {
        TreeVariant::KdMedian => TransformDescriptor::KdTree { max_leaf: tree.max_leaf },
        TreeVariant::RpMedian => TransformDescriptor::RpTree { max_leaf: tree.max_leaf },
    };
    finish(data, "", transform, rng, &groups)
}

/// Mean over rows of `‖x − rep(x)‖^alpha`, using the signature's recorded
/// row-to-rep assignment.
pub fn distortion(data: &Dataset, sig: &Signature, alpha: f64) -> Result<f64, DmlError> {
    if !(alpha >= 1.0) {
        return Err(DmlError::InvalidParameter(format!("alpha must be >= 1, got {alpha}")));
    }
    if sig.dim != data.d() {
        return Err(DmlError::DimensionMismatch {
            expected: data.d(),
            found: sig.dim,
        });
    }
    let assignment = sig
        .assignment
        .as_ref()
        .ok_or_else(|| DmlError::InvalidSignature("no row assignment recorded".into()))?;
    if assignment.len() != data.n() {
        return Err(DmlError::InvalidSignature(format!(
            "assignment covers {} rows, data has {}",
            assignment.len(),
            data.n()
        )));
    }
    let mut total = 0.0;
    for (x, &a) in data.features().rows().zip(assignment) {
        let rep = sig
            .reps
            .get(a)
            .ok_or_else(|| DmlError::InvalidSignature(format!("assignment to missing rep {a}")))?;
        let d2 = sq_dist(x, &rep.centroid);
        total += if alpha == 2.0 { d2 } else { d2.sqrt().powf(alpha) };
    }
    Ok(total / data.n() as f64)
}

/// Joins per-site signatures into one, with assignments offset so that it
/// describes the row-wise concatenation of the sites' datasets.
pub fn concat_signatures(parts: &[Signature], site_id: &str) -> Result<Signature, DmlError> {
    let first = parts
        .first()
        .ok_or_else(|| DmlError::InvalidSignature("nothing to concatenate".into()))?;
    let mut reps = Vec::new();
    let mut assignment = Some(Vec::new());
    for s in parts {
        if s.dim != first.dim {
            return Err(DmlError::DimensionMismatch {
                expected: first.dim,
                found: s.dim,
            });
        }
        let offset = reps.len();
        match (&mut assignment, &s.assignment) {
            (Some(all), Some(a)) => all.extend(a.iter().map(|&j| j + offset)),
            _ => assignment = None,
        }
        reps.extend(s.reps.iter().cloned());
    }
    Ok(Signature {
        site_id: site_id.to_string(),
        dim: first.dim,
        task: first.task,
        transform: first.transform,
        rng: first.rng,
        reps,
        assignment,
    })
}

fn strata(data: &Dataset, mode: ClassMode) -> Vec<Vec<usize>> {
    match (data.class_indices(), mode) {
        (Some(classes), ClassMode::Stratified) => classes.into_iter().filter(|c| !c.is_empty()).collect(),
        _ => vec![(0..data.n()).collect()],
    }
}

/// Splits `k` over strata proportionally (largest remainder), each stratum
/// getting between 1 and its size.
fn allocate(k: usize, sizes: &[usize]) -> Result<Vec<usize>, DmlError> {
    let n: usize = sizes.iter().sum();
    if k < sizes.len() || k > n {
        return Err(DmlError::InvalidK { k, n });
    }
    let mut ks: Vec<usize> = sizes
        .iter()
        .map(|&s| ((k as f64 * s as f64 / n as f64).floor() as usize).clamp(1, s))
        .collect();
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    let frac = |i: usize| k as f64 * sizes[i] as f64 / n as f64 - ks[i] as f64;
    order.sort_by(|&a, &b| frac(b).total_cmp(&frac(a)).then(a.cmp(&b)));
    let mut assigned: usize = ks.iter().sum();
    while assigned != k {
        let mut moved = false;
        for &i in &order {
            if assigned < k && ks[i] < sizes[i] {
                ks[i] += 1;
                assigned += 1;
                moved = true;
            } else if assigned > k && ks[i] > 1 {
                ks[i] -= 1;
                assigned -= 1;
                moved = true;
            }
        }
        debug_assert!(moved);
    }
    Ok(ks)
}

fn kmeans_groups(
    data: &Dataset,
    strata: &[Vec<usize>],
    ks: &[usize],
    max_iters: usize,
    tol: f64,
    rng: RngHandle,
) -> Result<Vec<Vec<usize>>, DmlError> {
    let mut groups = Vec::new();
    for (c, (rows, &k)) in strata.iter().zip(ks).enumerate() {
        let points = data.features().select_rows(rows);
        let params = KMeansParams { k, max_iters, tol };
        let fit = kmeans(&points, &params, &mut rng.fork(c as u64).rng())?;
        let base = groups.len();
        groups.extend((0..k).map(|_| Vec::new()));
        for (local, &g) in fit.assignment.iter().enumerate() {
            groups[base + g].push(rows[local]);
        }
    }
    Ok(groups)
}

fn finish(
    data: &Dataset,
    site_id: &str,
    transform: TransformDescriptor,
    rng: RngHandle,
    groups: &[Vec<usize>],
) -> Result<Signature, DmlError> {
    let (reps, assignment) = signature::reps_from_groups(data, groups)?;
    let sig = Signature {
        site_id: site_id.to_string(),
        dim: data.d(),
        task: data.task(),
        transform,
        rng,
        reps,
        assignment: Some(assignment),
    };
    sig.validate()?;
    Ok(sig)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{Matrix, Task};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn uniform(n: usize, d: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Matrix::from_vec(n, d, (0..n * d).map(|_| rng.random::<f64>()).collect()).unwrap();
        let y = (0..n).map(|i| x.get(i, 0) * 3.0 + rng.random::<f64>()).collect();
        Dataset::regression(x, y).unwrap()
    }

    fn labelled(n: usize, d: usize, c: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Matrix::from_vec(n, d, (0..n * d).map(|_| rng.random::<f64>()).collect()).unwrap();
        let labels = (0..n).map(|i| i % c).collect();
        Dataset::classification(x, labels, c).unwrap()
    }

    #[test]
    fn hand_arithmetic_distortion() {
        let data = Dataset::regression(Matrix::from_rows(&[[0.0], [2.0]]).unwrap(), vec![1.0, 3.0]).unwrap();
        let sig = kmeans_signature(&data, 1, RngHandle::new(0), 100, 1e-6, ClassMode::Stratified).unwrap();
        assert_eq!(sig.reps[0].centroid, vec![1.0]);
        assert_eq!(sig.reps[0].response, 2.0);
        assert_eq!(distortion(&data, &sig, 2.0).unwrap(), 1.0);
        assert_eq!(distortion(&data, &sig, 1.0).unwrap(), 1.0);
    }

    #[test]
    fn k_equals_n_is_lossless() {
        let data = uniform(50, 3, 1);
        let sig = kmeans_signature(&data, 50, RngHandle::new(1), 100, 1e-6, ClassMode::Stratified).unwrap();
        assert_eq!(distortion(&data, &sig, 2.0).unwrap(), 0.0);
        assert!(sig.reps.iter().all(|r| r.weight == 1));
    }

    #[test]
    fn single_leaf_tree_rep_is_mean() {
        let data = Dataset::regression(Matrix::from_rows(&[[0.0, 0.0], [2.0, 2.0]]).unwrap(), vec![0.0, 4.0]).unwrap();
        let tree = build_tree(&data, TreeVariant::KdMedian, 2, false, RngHandle::new(0)).unwrap();
        let sig = tree_signature(&tree, &data, RngHandle::new(0)).unwrap();
        assert_eq!(sig.len(), 1);
        assert_eq!(sig.reps[0].centroid, vec![1.0, 1.0]);
        assert_eq!(sig.reps[0].weight, 2);
    }

    #[test]
    fn eight_point_tree_signature() {
        let xs = [5.0, 1.0, 7.0, 3.0, 8.0, 2.0, 6.0, 4.0];
        let data = Dataset::regression(Matrix::from_vec(8, 1, xs.to_vec()).unwrap(), xs.to_vec()).unwrap();
        let tree = build_tree(&data, TreeVariant::KdMedian, 2, false, RngHandle::new(0)).unwrap();
        let sig = tree_signature(&tree, &data, RngHandle::new(0)).unwrap();
        let mut c: Vec<f64> = sig.reps.iter().map(|r| r.centroid[0]).collect();
        c.sort_by(f64::total_cmp);
        assert_eq!(c, vec![1.5, 3.5, 5.5, 7.5]);
        assert!(sig.reps.iter().all(|r| r.weight == 2));
    }

    #[test]
    fn kmeans_errors() {
        let data = uniform(5, 2, 0);
        assert!(matches!(
            kmeans_signature(&data, 6, RngHandle::new(0), 10, 1e-6, ClassMode::Stratified),
            Err(DmlError::InvalidK { k: 6, n: 5 })
        ));
    }

    #[test]
    fn stratified_reps_are_pure_and_pooled_are_majority() {
        let data = labelled(400, 2, 3, 4);
        for kind in [DmlKind::Kmeans, DmlKind::Kdtree, DmlKind::Rptree] {
            let cfg = DmlConfig::new(kind, 8.0);
            let sig = compress(&data, &cfg, "s", RngHandle::new(2)).unwrap();
            let a = sig.assignment.as_ref().unwrap();
            let labels = data.labels().unwrap();
            for (i, &g) in a.iter().enumerate() {
                assert_eq!(sig.reps[g].response as usize, labels[i], "{kind}");
            }
            let pooled = compress(
                &data,
                &DmlConfig {
                    class_mode: ClassMode::Pooled,
                    ..cfg.clone()
                },
                "s",
                RngHandle::new(2),
            )
            .unwrap();
            assert_eq!(pooled.total_weight(), 400);
        }
    }

    #[test]
    fn tree_ratio_is_near_target() {
        let data = uniform(40000, 6, 3);
        for kind in [DmlKind::Kdtree, DmlKind::Rptree] {
            let sig = compress(&data, &DmlConfig::new(kind, 40.0), "s", RngHandle::new(0)).unwrap();
            assert_eq!(sig.len(), 1024);
        }
    }

    #[test]
    fn allocation_is_proportional() {
        assert_eq!(allocate(10, &[50, 30, 20]).unwrap(), vec![5, 3, 2]);
        assert_eq!(allocate(3, &[100, 1, 1]).unwrap(), vec![1, 1, 1]);
        assert_eq!(allocate(4, &[1, 1, 10]).unwrap().iter().sum::<usize>(), 4);
        assert!(allocate(2, &[1, 1, 1]).is_err());
    }

    #[test]
    fn concatenation_identity() {
        let a = uniform(300, 2, 10);
        let b = uniform(500, 2, 11);
        let cfg = DmlConfig::new(DmlKind::Kmeans, 10.0);
        let sa = compress(&a, &cfg, "a", RngHandle::new(1)).unwrap();
        let sb = compress(&b, &cfg, "b", RngHandle::new(2)).unwrap();
        let joined = concat_signatures(&[sa.clone(), sb.clone()], "ab").unwrap();
        let pooled = Dataset::concat(&[&a, &b]).unwrap();
        let lhs = distortion(&pooled, &joined, 2.0).unwrap();
        let rhs = 0.375 * distortion(&a, &sa, 2.0).unwrap() + 0.625 * distortion(&b, &sb, 2.0).unwrap();
        assert!((lhs - rhs).abs() <= 1e-14 * rhs.max(1.0));
    }

    #[test]
    fn distortion_decreases_with_k() {
        let data = uniform(4000, 2, 6);
        let mut last = f64::INFINITY;
        for k in [4, 16, 64, 256] {
            let sig = kmeans_signature(&data, k, RngHandle::new(k as u64), 100, 1e-6, ClassMode::Stratified).unwrap();
            let d = distortion(&data, &sig, 2.0).unwrap();
            assert!(d < last);
            last = d;
        }
    }

    #[test]
    fn distortion_rejects_mismatch() {
        let data = uniform(20, 2, 0);
        let other = uniform(20, 3, 0);
        let sig = compress(&data, &DmlConfig::new(DmlKind::Kdtree, 4.0), "s", RngHandle::new(0)).unwrap();
        assert!(matches!(distortion(&other, &sig, 2.0), Err(DmlError::DimensionMismatch { .. })));
        let mut stripped = sig.clone();
        stripped.assignment = None;
        assert!(distortion(&data, &stripped, 2.0).is_err());
        assert!(distortion(&data, &sig, 0.5).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn mass_and_grand_mean(n in 1usize..120, d in 1usize..4, ratio in 1.0f64..12.0, kind in 0usize..3, seed in 0u64..1000, classes in 0usize..4) {
            let data = if classes < 2 { uniform(n, d, seed) } else { labelled(n.max(classes), d, classes, seed) };
            let kind = [DmlKind::Kmeans, DmlKind::Kdtree, DmlKind::Rptree][kind];
            let sig = compress(&data, &DmlConfig::new(kind, ratio), "s", RngHandle::new(seed)).unwrap();
            prop_assert_eq!(sig.total_weight() as usize, data.n());
            prop_assert!(sig.min_weight() >= 1);
            let total = sig.total_weight() as f64;
            for j in 0..d {
                let grand = data.features().column(j).iter().sum::<f64>() / data.n() as f64;
                let rec = sig.reps.iter().map(|r| r.weight as f64 * r.centroid[j]).sum::<f64>() / total;
                prop_assert!((grand - rec).abs() < 1e-10);
            }
            if let Task::Regression = data.task() {
                let y = data.targets().unwrap();
                let grand = y.iter().sum::<f64>() / y.len() as f64;
                let rec = sig.reps.iter().map(|r| r.weight as f64 * r.response).sum::<f64>() / total;
                prop_assert!((grand - rec).abs() < 1e-10);
            }
        }
    }
}

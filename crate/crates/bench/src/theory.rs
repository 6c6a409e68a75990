//! Empirical checks of the transforms' distortion behaviour.

use anyhow::{ensure, Result};
use dmlfed_core::dml::{build_tree, compress, concat_signatures, distortion, kmeans_signature, ClassMode, DmlConfig, DmlKind};
use dmlfed_core::dml::{TreeNode, TreeVariant};
use dmlfed_core::numerics::{Dataset, Matrix, RngHandle};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::metrics::loglog_slope;
use crate::plot::{Chart, Series};
use crate::report::{num, Check, Report, Table};

fn uniform(n: usize, d: usize, rng: RngHandle) -> Dataset {
    let mut r = rng.rng();
    let x = Matrix::from_vec(n, d, (0..n * d).map(|_| r.random::<f64>()).collect()).expect("shape");
    Dataset::regression(x, vec![0.0; n]).expect("finite")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DistortionParams {
    pub n: usize,
    pub dims: Vec<usize>,
    pub ks: Vec<usize>,
    /// Exponent on the distance.
    pub alpha: f64,
    pub tolerance: f64,
}

impl Default for DistortionParams {
    fn default() -> Self {
        Self {
            n: 20000,
            dims: vec![1, 2],
            ks: vec![8, 16, 32, 64, 128, 256],
            alpha: 2.0,
            tolerance: 0.15,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistortionCurve {
    pub d: usize,
    pub ks: Vec<usize>,
    pub distortion: Vec<f64>,
    pub slope: f64,
    pub predicted: f64,
    pub monotone: bool,
}

/// K-means distortion of uniform `[0,1]^d` data over the k grid.
pub fn distortion_curve(n: usize, d: usize, ks: &[usize], alpha: f64, rng: RngHandle) -> Result<DistortionCurve> {
    ensure!(ks.len() >= 4, "the k grid needs at least 4 points");
    ensure!(ks.windows(2).all(|w| w[0] < w[1]), "the k grid must increase");
    let data = uniform(n, d, rng.fork(0));
    let mut out = Vec::with_capacity(ks.len());
    for &k in ks {
        let sig = kmeans_signature(&data, k, rng.fork(k as u64), 300, 0.0, ClassMode::Stratified)?;
        out.push(distortion(&data, &sig, alpha)?);
    }
    let kf: Vec<f64> = ks.iter().map(|&k| k as f64).collect();
    Ok(DistortionCurve {
        d,
        ks: ks.to_vec(),
        slope: loglog_slope(&kf, &out),
        predicted: -alpha / d as f64,
        monotone: out.windows(2).all(|w| w[1] < w[0]),
        distortion: out,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LeafWidthParams {
    pub n: usize,
    pub depths: Vec<usize>,
    pub tolerance: f64,
}

impl Default for LeafWidthParams {
    fn default() -> Self {
        Self {
            n: 1 << 20,
            depths: (0..=8).collect(),
            tolerance: 0.25,
        }
    }
}

/// Largest leaf width (max − min of the leaf's points) of a median k-d tree
/// cut to exactly `depth` levels, on 1-D uniform data, for each depth.
pub fn leaf_widths(n: usize, depths: &[usize], rng: RngHandle) -> Result<Vec<f64>> {
    let deepest = depths.iter().copied().max().unwrap_or(0);
    ensure!(
        n >> deepest >= 20,
        "n = {n} leaves fewer than 20 points per leaf at depth {deepest}"
    );
    let data = uniform(n, 1, rng.fork(0));
    let x = data.features().column(0);
    let mut widths = Vec::with_capacity(depths.len());
    for &depth in depths {
        // a node splits only when it holds more than max_leaf rows
        let max_leaf = n.div_ceil(1 << depth);
        let tree = build_tree(&data, TreeVariant::KdMedian, max_leaf, false, rng.fork(1))?;
        ensure!(tree.depth() == depth + 1, "tree has {} levels instead of {}", tree.depth(), depth + 1);
        let mut w: f64 = 0.0;
        for node in &tree.nodes {
            if let TreeNode::Leaf { rows } = node {
                let (lo, hi) = rows
                    .iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &i| (a.min(x[i]), b.max(x[i])));
                w = w.max(hi - lo);
            }
        }
        widths.push(w);
    }
    Ok(widths)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConcatParams {
    pub sizes: Vec<usize>,
    pub d: usize,
    pub ratio: f64,
}

impl Default for ConcatParams {
    fn default() -> Self {
        Self {
            sizes: vec![3000, 1200],
            d: 3,
            ratio: 10.0,
        }
    }
}

/// `(distortion of the concatenated transform, size-weighted mean of the
/// site distortions)` for each transform kind. Site s draws from
/// `U[0,1]^d` shifted by s.
pub fn concat_distortion(p: &ConcatParams, rng: RngHandle) -> Result<Vec<(DmlKind, f64, f64)>> {
    let sites: Vec<Dataset> = p
        .sizes
        .iter()
        .enumerate()
        .map(|(s, &n)| {
            let u = uniform(n, p.d, rng.fork(s as u64));
            let shifted: Vec<f64> = u.features().as_slice().iter().map(|v| v + s as f64).collect();
            Dataset::regression(Matrix::from_vec(n, p.d, shifted).expect("shape"), vec![0.0; n]).expect("finite")
        })
        .collect();
    let all = Dataset::concat(&sites.iter().collect::<Vec<_>>())?;
    let total: f64 = p.sizes.iter().sum::<usize>() as f64;
    let mut out = Vec::new();
    for kind in [DmlKind::Kmeans, DmlKind::Kdtree, DmlKind::Rptree] {
        let cfg = DmlConfig::new(kind, p.ratio);
        let sigs = sites
            .iter()
            .enumerate()
            .map(|(s, data)| compress(data, &cfg, &format!("s{s}"), rng.fork(100 + s as u64)))
            .collect::<Result<Vec<_>, _>>()?;
        let joined = concat_signatures(&sigs, "all")?;
        let whole = distortion(&all, &joined, 2.0)?;
        let mut weighted = 0.0;
        for (data, sig) in sites.iter().zip(&sigs) {
            weighted += data.n() as f64 / total * distortion(data, sig, 2.0)?;
        }
        out.push((kind, whole, weighted));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TheoryParams {
    pub seed: u64,
    pub distortion: DistortionParams,
    pub leafwidth: LeafWidthParams,
    pub concat: ConcatParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TheoryCheck {
    Distortion,
    LeafWidth,
    Concat,
}

impl std::str::FromStr for TheoryCheck {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "distortion" => Ok(Self::Distortion),
            "leafwidth" => Ok(Self::LeafWidth),
            "concat" => Ok(Self::Concat),
            _ => Err(format!("unknown check `{s}` (expected distortion, leafwidth or concat)")),
        }
    }
}

pub fn run_distortion(p: &TheoryParams) -> Result<Report> {
    let q = &p.distortion;
    let root = RngHandle::new(p.seed).fork_str("distortion");
    let mut runs = Table::new(&["d", "k", "distortion"]);
    let mut summary = Table::new(&["d", "slope", "predicted", "monotone"]);
    let mut checks = Vec::new();
    let mut chart = Chart {
        title: "K-means distortion on uniform data".into(),
        x_label: "k".into(),
        y_label: "mean squared distortion".into(),
        log_x: true,
        log_y: true,
        series: Vec::new(),
    };
    for &d in &q.dims {
        let c = distortion_curve(q.n, d, &q.ks, q.alpha, root.fork(d as u64))?;
        for (k, v) in c.ks.iter().zip(&c.distortion) {
            runs.push(vec![d.to_string(), k.to_string(), num(*v)]);
        }
        summary.push(vec![d.to_string(), num(c.slope), num(c.predicted), c.monotone.to_string()]);
        checks.push(Check::new(
            format!("distortion slope d={d}"),
            (c.slope - c.predicted).abs() <= q.tolerance && c.monotone,
            format!("slope {:.4}, predicted {:.4} ± {}", c.slope, c.predicted, q.tolerance),
        ));
        chart.series.push(Series::line(
            format!("d = {d}"),
            c.ks.iter().zip(&c.distortion).map(|(&k, &v)| (k as f64, v, 0.0)).collect(),
        ));
    }
    // with one rep per row every point is its own centroid
    let small = uniform(200, 2, root.fork(99));
    let sig = kmeans_signature(&small, 200, root.fork(98), 10, 0.0, ClassMode::Stratified)?;
    let zero = distortion(&small, &sig, q.alpha)?;
    checks.push(Check::new("distortion at k = n", zero == 0.0, format!("{zero}")));
    Ok(Report {
        name: "theory_distortion".into(),
        config: toml::to_string(p)?,
        runs,
        summary,
        checks,
        plots: vec![(String::new(), chart.render())],
        ..Default::default()
    })
}

pub fn run_leafwidth(p: &TheoryParams) -> Result<Report> {
    let q = &p.leafwidth;
    let widths = leaf_widths(q.n, &q.depths, RngHandle::new(p.seed).fork_str("leafwidth"))?;
    let mut runs = Table::new(&["depth", "max_width", "bound"]);
    let mut checks = Vec::new();
    for (&k, &w) in q.depths.iter().zip(&widths) {
        let bound = 0.5f64.powi(k as i32);
        runs.push(vec![k.to_string(), num(w), num(bound)]);
        if k > 0 {
            checks.push(Check::new(
                format!("leaf width depth {k}"),
                (w / bound - 1.0).abs() <= q.tolerance,
                format!("max width {w:.6}, 2^-{k} = {bound:.6}"),
            ));
        }
    }
    let chart = Chart {
        title: "Median k-d tree leaf width, 1-D uniform".into(),
        x_label: "depth".into(),
        y_label: "max leaf width".into(),
        log_y: true,
        series: vec![
            Series::line("observed", q.depths.iter().zip(&widths).map(|(&k, &w)| (k as f64, w, 0.0)).collect()),
            Series::line("2^-depth", q.depths.iter().map(|&k| (k as f64, 0.5f64.powi(k as i32), 0.0)).collect()),
        ],
        ..Default::default()
    };
    Ok(Report {
        name: "theory_leafwidth".into(),
        config: toml::to_string(p)?,
        summary: runs.clone(),
        runs,
        checks,
        plots: vec![(String::new(), chart.render())],
        ..Default::default()
    })
}

pub fn run_concat(p: &TheoryParams) -> Result<Report> {
    let rows = concat_distortion(&p.concat, RngHandle::new(p.seed).fork_str("concat"))?;
    let mut runs = Table::new(&["transform", "concatenated", "weighted_mean", "abs_diff"]);
    let mut checks = Vec::new();
    for (kind, whole, weighted) in rows {
        let diff = (whole - weighted).abs();
        runs.push(vec![kind.to_string(), num(whole), num(weighted), num(diff)]);
        checks.push(Check::new(
            format!("concatenation {kind}"),
            diff <= 1e-12 * whole.max(1e-300),
            format!("{whole:.6e} vs {weighted:.6e}"),
        ));
    }
    Ok(Report {
        name: "theory_concat".into(),
        config: toml::to_string(p)?,
        summary: runs.clone(),
        runs,
        checks,
        ..Default::default()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_grids_are_rejected() {
        assert!(distortion_curve(100, 1, &[2, 4, 8], 2.0, RngHandle::new(0)).is_err());
        assert!(leaf_widths(1000, &[8], RngHandle::new(0)).is_err());
    }

    #[test]
    fn depth_zero_is_the_sample_range() {
        let w = leaf_widths(4096, &[0, 1], RngHandle::new(3)).unwrap();
        let x = uniform(4096, 1, RngHandle::new(3).fork(0)).features().column(0);
        let range = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - x.iter().cloned().fold(f64::INFINITY, f64::min);
        assert_eq!(w[0], range);
        assert!(w[1] < 0.55 && w[1] > 0.45);
    }

    #[test]
    fn concatenation_identity_holds() {
        let p = ConcatParams {
            sizes: vec![300, 120, 57],
            d: 2,
            ratio: 6.0,
        };
        for (_, whole, weighted) in concat_distortion(&p, RngHandle::new(4)).unwrap() {
            assert!((whole - weighted).abs() <= 1e-12 * whole);
        }
    }
}

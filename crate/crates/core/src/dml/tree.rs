//! Median-cut space partitioning trees.
//!
//! A node holding more than `max_leaf` rows is split in two at the median of
//! the rows' projections onto a direction: the coordinate axis `depth mod d`
//! for the k-d variant, a fresh uniformly random unit vector for the
//! random-projection variant. After a stable sort by projection the first
//! `floor(size / 2)` rows go left. A node whose projections are all equal
//! becomes a leaf regardless of size.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::DmlError;
use crate::numerics::matrix::dot;
use crate::numerics::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreeVariant {
    KdMedian,
    RpMedian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SplitDirection {
    Axis(usize),
    /// Unit vector in the (optionally standardized) feature space.
    Projection(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TreeNode {
    Split {
        direction: SplitDirection,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        rows: Vec<usize>,
    },
}

/// Per-feature centering and scaling applied before projecting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardization {
    pub fn fit(points: &Matrix, rows: &[usize]) -> Self {
        let d = points.ncols();
        let n = rows.len().max(1) as f64;
        let mut mean = vec![0.0; d];
        for &i in rows {
            for (m, v) in mean.iter_mut().zip(points.row(i)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for &i in rows {
            for ((s, v), m) in var.iter_mut().zip(points.row(i)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let scale = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 0.0 { sd } else { 1.0 }
            })
            .collect();
        Self { mean, scale }
    }

    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(x.iter().zip(&self.mean).zip(&self.scale).map(|((v, m), s)| (v - m) / s));
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionTree {
    pub variant: TreeVariant,
    pub max_leaf: usize,
    pub dim: usize,
    /// Node 0 is the root.
    pub nodes: Vec<TreeNode>,
    pub standardization: Option<Standardization>,
}

impl PartitionTree {
    /// Grows a tree over `rows` of `points`.
    pub fn build<R: Rng + ?Sized>(
        points: &Matrix,
        rows: &[usize],
        variant: TreeVariant,
        max_leaf: usize,
        standardize: bool,
        rng: &mut R,
    ) -> Result<Self, DmlError> {
        if rows.is_empty() || points.nrows() == 0 {
            return Err(DmlError::EmptyInput);
        }
        if max_leaf == 0 {
            return Err(DmlError::InvalidParameter("max leaf size must be at least 1".into()));
        }
        if let Some(&i) = rows.iter().find(|&&i| i >= points.nrows()) {
            return Err(DmlError::CorruptTree(format!("row {i} out of range")));
        }
        let d = points.ncols();
        let standardization = (standardize && variant == TreeVariant::RpMedian)
            .then(|| Standardization::fit(points, rows));

        let mut tree = PartitionTree {
            variant,
            max_leaf,
            dim: d,
            nodes: vec![TreeNode::Leaf { rows: Vec::new() }],
            standardization,
        };
        // depth-first, left child first, so rng draws follow a fixed order
        let mut stack = vec![(0usize, rows.to_vec(), 0usize)];
        let mut buf = Vec::with_capacity(d);
        let mut keyed: Vec<(f64, usize)> = Vec::new();
        while let Some((slot, node_rows, depth)) = stack.pop() {
            if node_rows.len() <= max_leaf {
                tree.nodes[slot] = TreeNode::Leaf { rows: node_rows };
                continue;
            }
            let direction = match variant {
                TreeVariant::KdMedian => SplitDirection::Axis(depth % d),
                TreeVariant::RpMedian => SplitDirection::Projection(random_unit(d, rng)),
            };
            keyed.clear();
            for &i in &node_rows {
                keyed.push((tree.project(&direction, points.row(i), &mut buf), i));
            }
            // stable: equal projections keep their incoming order
            keyed.sort_by(|a, b| a.0.total_cmp(&b.0));
            if keyed[0].0 == keyed[keyed.len() - 1].0 {
                tree.nodes[slot] = TreeNode::Leaf { rows: node_rows };
                continue;
            }
            let mid = keyed.len() / 2;
            let threshold = 0.5 * (keyed[mid - 1].0 + keyed[mid].0);
            let left_rows: Vec<usize> = keyed[..mid].iter().map(|p| p.1).collect();
            let right_rows: Vec<usize> = keyed[mid..].iter().map(|p| p.1).collect();
            let left = tree.nodes.len();
            let right = left + 1;
            tree.nodes.push(TreeNode::Leaf { rows: Vec::new() });
            tree.nodes.push(TreeNode::Leaf { rows: Vec::new() });
            tree.nodes[slot] = TreeNode::Split {
                direction,
                threshold,
                left,
                right,
            };
            stack.push((right, right_rows, depth + 1));
            stack.push((left, left_rows, depth + 1));
        }
        Ok(tree)
    }

    fn project(&self, direction: &SplitDirection, x: &[f64], buf: &mut Vec<f64>) -> f64 {
        match direction {
            SplitDirection::Axis(j) => x[*j],
            SplitDirection::Projection(u) => match &self.standardization {
                Some(s) => {
                    s.apply(x, buf);
                    dot(u, buf)
                }
                None => dot(u, x),
            },
        }
    }

    /// Leaf row sets in depth-first (left to right) order.
    pub fn leaves(&self) -> Vec<&[usize]> {
        let mut out = Vec::new();
        let mut stack = vec![0usize];
        while let Some(n) = stack.pop() {
            match &self.nodes[n] {
                TreeNode::Leaf { rows } => out.push(rows.as_slice()),
                TreeNode::Split { left, right, .. } => {
                    stack.push(*right);
                    stack.push(*left);
                }
            }
        }
        out
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, TreeNode::Leaf { .. })).count()
    }

    /// Number of levels; a single leaf has depth 1.
    pub fn depth(&self) -> usize {
        fn go(t: &PartitionTree, n: usize) -> usize {
            match &t.nodes[n] {
                TreeNode::Leaf { .. } => 1,
                TreeNode::Split { left, right, .. } => 1 + go(t, *left).max(go(t, *right)),
            }
        }
        go(self, 0)
    }

    /// Routes a new point to a leaf index (position in [`Self::leaves`]
    /// order is not implied; this is the node id).
    pub fn route(&self, x: &[f64]) -> usize {
        let mut buf = Vec::new();
        let mut n = 0;
        loop {
            match &self.nodes[n] {
                TreeNode::Leaf { .. } => return n,
                TreeNode::Split {
                    direction,
                    threshold,
                    left,
                    right,
                } => {
                    n = if self.project(direction, x, &mut buf) < *threshold {
                        *left
                    } else {
                        *right
                    }
                }
            }
        }
    }
}

fn random_unit<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let norm = dot(&v, &v).sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

//! Multi-output regression forest.
//!
//! One forest serves all `d` targets: every split maximizes the reduction of
//! the summed within-node variance across target coordinates and every leaf
//! stores the mean target vector of its samples. Bootstrap multiplicities are
//! carried as integer row weights, and each tree derives its ordering of the
//! in-bag rows from a per-forest presort, so growing a tree never sorts.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestConfig {
    pub n_trees: usize,
    /// Candidate features drawn per node; `None` means ⌈√p⌉.
    pub mtry: Option<usize>,
    pub min_leaf: usize,
    pub max_depth: Option<usize>,
    /// Draw a with-replacement resample per tree. When off every tree sees
    /// each training row exactly once.
    pub bootstrap: bool,
    /// Resample size as a fraction of `n`.
    pub bootstrap_fraction: f64,
    /// Grow trees on the rayon pool.
    pub parallel: bool,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 200,
            mtry: None,
            min_leaf: 5,
            max_depth: None,
            bootstrap: true,
            bootstrap_fraction: 1.0,
            parallel: true,
        }
    }
}

impl ForestConfig {
    pub fn resolved_mtry(&self, n_features: usize) -> usize {
        self.mtry
            .unwrap_or_else(|| (n_features as f64).sqrt().ceil() as usize)
            .clamp(1, n_features.max(1))
    }

    pub fn validate(&self, n_features: usize) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::InvalidSpec("forest needs at least one tree".into()));
        }
        if self.min_leaf == 0 {
            return Err(Error::InvalidSpec("min_leaf must be at least 1".into()));
        }
        if let Some(m) = self.mtry {
            if m == 0 || m > n_features {
                return Err(Error::InvalidSpec(format!("mtry {m} outside 1..={n_features}")));
            }
        }
        if !(self.bootstrap_fraction > 0.0 && self.bootstrap_fraction <= 1.0) {
            return Err(Error::InvalidSpec(format!(
                "bootstrap_fraction {} outside (0, 1]",
                self.bootstrap_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
enum Node {
    Split {
        feature: u32,
        threshold: f64,
        left: u32,
        right: u32,
    },
    Leaf {
        offset: u32,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    nodes: Vec<Node>,
    leaf_values: Vec<f64>,
}

impl RegressionTree {
    fn leaf_for(&self, row: &[f64], d: usize) -> &[f64] {
        let mut at = 0usize;
        loop {
            match self.nodes[at] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    at = if row[feature as usize] <= threshold {
                        left as usize
                    } else {
                        right as usize
                    };
                }
                Node::Leaf { offset } => {
                    let o = offset as usize;
                    return &self.leaf_values[o..o + d];
                }
            }
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    trees: Vec<RegressionTree>,
    feature_count: usize,
    target_count: usize,
}

impl ForestModel {
    pub fn fit(config: &ForestConfig, seed: u64, features: &Matrix, targets: &Matrix) -> Result<Self> {
        let (n, p) = features.shape();
        let d = targets.ncols();
        if targets.nrows() != n {
            return Err(Error::shape("forest fit", format!("{n} target rows"), targets.nrows()));
        }
        if n == 0 || p == 0 || d == 0 {
            return Err(Error::shape(
                "forest fit",
                "non-empty features and targets",
                format!("{n}x{p} -> {d}"),
            ));
        }
        config.validate(p)?;
        let shared = SharedData::new(features, targets);
        let grow = |tree_index: usize| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(tree_index as u64);
            grow_tree(&shared, config, p, &mut rng)
        };
        let trees: Vec<RegressionTree> = if config.parallel {
            (0..config.n_trees).into_par_iter().map(grow).collect()
        } else {
            (0..config.n_trees).map(grow).collect()
        };
        Ok(Self {
            trees,
            feature_count: p,
            target_count: d,
        })
    }

    pub fn predict(&self, features: &Matrix) -> Result<Matrix> {
        if features.ncols() != self.feature_count {
            return Err(Error::shape("forest predict", self.feature_count, features.ncols()));
        }
        let m = features.nrows();
        let d = self.target_count;
        let scale = 1.0 / self.trees.len() as f64;
        let mut out = Matrix::zeros(m, d);
        let mut row = vec![0.0; self.feature_count];
        let mut acc = vec![0.0; d];
        for i in 0..m {
            for (j, v) in row.iter_mut().enumerate() {
                *v = features[(i, j)];
            }
            acc.iter_mut().for_each(|a| *a = 0.0);
            for tree in &self.trees {
                for (a, v) in acc.iter_mut().zip(tree.leaf_for(&row, d)) {
                    *a += v;
                }
            }
            for (j, a) in acc.iter().enumerate() {
                out[(i, j)] = a * scale;
            }
        }
        Ok(out)
    }

    pub fn trees(&self) -> &[RegressionTree] {
        &self.trees
    }

    pub fn feature_count(&self) -> usize {
        self.feature_count
    }

    pub fn target_count(&self) -> usize {
        self.target_count
    }
}

/// Read-only training data shared by every tree.
struct SharedData {
    n: usize,
    d: usize,
    /// Column-major features.
    x: Vec<f64>,
    /// Row-major targets, centered by their column means.
    y: Vec<f64>,
    y_means: Vec<f64>,
    /// Per feature, row indices in ascending feature order.
    order: Vec<Vec<u32>>,
}

impl SharedData {
    fn new(features: &Matrix, targets: &Matrix) -> Self {
        let (n, p) = features.shape();
        let d = targets.ncols();
        let x = features.as_slice().to_vec();
        let y_means: Vec<f64> = targets.column_iter().map(|c| c.sum() / n as f64).collect();
        let mut y = Vec::with_capacity(n * d);
        for i in 0..n {
            for j in 0..d {
                y.push(targets[(i, j)] - y_means[j]);
            }
        }
        let order = (0..p)
            .map(|f| {
                let col = &x[f * n..(f + 1) * n];
                let mut idx: Vec<u32> = (0..n as u32).collect();
                idx.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]));
                idx
            })
            .collect();
        Self {
            n,
            d,
            x,
            y,
            y_means,
            order,
        }
    }

    #[inline]
    fn value(&self, feature: usize, row: u32) -> f64 {
        self.x[feature * self.n + row as usize]
    }

    #[inline]
    fn target(&self, row: u32) -> &[f64] {
        let r = row as usize * self.d;
        &self.y[r..r + self.d]
    }
}

fn grow_tree(data: &SharedData, config: &ForestConfig, p: usize, rng: &mut ChaCha8Rng) -> RegressionTree {
    let n = data.n;
    let mut weights = vec![0u32; n];
    if config.bootstrap {
        let draws = ((config.bootstrap_fraction * n as f64).round() as usize).max(1);
        for _ in 0..draws {
            weights[rng.random_range(0..n)] += 1;
        }
    } else {
        weights.iter_mut().for_each(|w| *w = 1);
    }
    let sorted: Vec<Vec<u32>> = data
        .order
        .iter()
        .map(|ord| ord.iter().copied().filter(|&r| weights[r as usize] > 0).collect())
        .collect();
    let in_bag = sorted[0].len();
    let mut builder = TreeBuilder {
        data,
        weights,
        sorted,
        goes_left: vec![false; n],
        scratch: Vec::with_capacity(in_bag),
        mtry: config.resolved_mtry(p),
        min_leaf: config.min_leaf as u64,
        max_depth: config.max_depth,
        p,
        nodes: Vec::new(),
        leaf_values: Vec::new(),
        left_sum: vec![0.0; data.d],
        total: vec![0.0; data.d],
    };
    builder.build(0, in_bag, 0, rng);
    RegressionTree {
        nodes: builder.nodes,
        leaf_values: builder.leaf_values,
    }
}

struct TreeBuilder<'a> {
    data: &'a SharedData,
    weights: Vec<u32>,
    sorted: Vec<Vec<u32>>,
    goes_left: Vec<bool>,
    scratch: Vec<u32>,
    mtry: usize,
    min_leaf: u64,
    max_depth: Option<usize>,
    p: usize,
    nodes: Vec<Node>,
    leaf_values: Vec<f64>,
    left_sum: Vec<f64>,
    total: Vec<f64>,
}

struct Candidate {
    feature: usize,
    threshold: f64,
    score: f64,
}

impl TreeBuilder<'_> {
    fn build(&mut self, start: usize, end: usize, depth: usize, rng: &mut ChaCha8Rng) -> u32 {
        let d = self.data.d;
        let mut weight = 0u64;
        let mut sum_sq = 0.0;
        self.total.iter_mut().for_each(|t| *t = 0.0);
        for &row in &self.sorted[0][start..end] {
            let w = self.weights[row as usize] as f64;
            weight += self.weights[row as usize] as u64;
            for (t, y) in self.total.iter_mut().zip(self.data.target(row)) {
                *t += w * y;
                sum_sq += w * y * y;
            }
        }
        let parent_score: f64 = self.total.iter().map(|t| t * t).sum::<f64>() / weight as f64;
        let sse = sum_sq - parent_score;

        let can_split = weight >= 2 * self.min_leaf
            && self.max_depth.is_none_or(|m| depth < m)
            && sse > 1e-12 * sum_sq.max(f64::MIN_POSITIVE);
        let best = if can_split {
            self.best_split(start, end, weight, rng)
                .filter(|c| c.score - parent_score > 1e-12 * sse)
        } else {
            None
        };

        let Some(best) = best else {
            let offset = self.leaf_values.len() as u32;
            for j in 0..d {
                self.leaf_values
                    .push(self.total[j] / weight as f64 + self.data.y_means[j]);
            }
            self.nodes.push(Node::Leaf { offset });
            return (self.nodes.len() - 1) as u32;
        };

        let mid = self.partition(start, end, best.feature, best.threshold);
        let at = self.nodes.len();
        self.nodes.push(Node::Leaf { offset: 0 });
        let left = self.build(start, mid, depth + 1, rng);
        let right = self.build(mid, end, depth + 1, rng);
        self.nodes[at] = Node::Split {
            feature: best.feature as u32,
            threshold: best.threshold,
            left,
            right,
        };
        at as u32
    }

    /// Scans `mtry` random features in ascending index order; ties keep the
    /// first (lowest feature, smallest threshold) candidate.
    fn best_split(&mut self, start: usize, end: usize, weight: u64, rng: &mut ChaCha8Rng) -> Option<Candidate> {
        let mut features = index::sample(rng, self.p, self.mtry).into_vec();
        features.sort_unstable();
        let mut best: Option<Candidate> = None;
        for f in features {
            self.left_sum.iter_mut().for_each(|s| *s = 0.0);
            let rows = &self.sorted[f][start..end];
            let mut left_weight = 0u64;
            for k in 0..rows.len() - 1 {
                let row = rows[k];
                let w = self.weights[row as usize];
                left_weight += w as u64;
                let wf = w as f64;
                for (s, y) in self.left_sum.iter_mut().zip(self.data.target(row)) {
                    *s += wf * y;
                }
                let right_weight = weight - left_weight;
                if right_weight < self.min_leaf {
                    break;
                }
                if left_weight < self.min_leaf {
                    continue;
                }
                let here = self.data.value(f, row);
                let next = self.data.value(f, rows[k + 1]);
                if here == next {
                    continue;
                }
                let (mut l2, mut r2) = (0.0, 0.0);
                for (s, t) in self.left_sum.iter().zip(&self.total) {
                    l2 += s * s;
                    let r = t - s;
                    r2 += r * r;
                }
                let score = l2 / left_weight as f64 + r2 / right_weight as f64;
                if best.as_ref().is_none_or(|b| score > b.score) {
                    let mut threshold = 0.5 * (here + next);
                    if !(threshold >= here && threshold < next) {
                        threshold = here;
                    }
                    best = Some(Candidate {
                        feature: f,
                        threshold,
                        score,
                    });
                }
            }
        }
        best
    }

    /// Stable partition of every feature ordering; returns the split point.
    fn partition(&mut self, start: usize, end: usize, feature: usize, threshold: f64) -> usize {
        let mut n_left = 0;
        for &row in &self.sorted[feature][start..end] {
            let left = self.data.value(feature, row) <= threshold;
            self.goes_left[row as usize] = left;
            n_left += left as usize;
        }
        for g in 0..self.p {
            let range = &mut self.sorted[g][start..end];
            self.scratch.clear();
            let mut write = 0;
            for i in 0..range.len() {
                let row = range[i];
                if self.goes_left[row as usize] {
                    range[write] = row;
                    write += 1;
                } else {
                    self.scratch.push(row);
                }
            }
            range[write..].copy_from_slice(&self.scratch);
        }
        start + n_left
    }
}

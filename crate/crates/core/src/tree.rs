//! CART-style regression trees.
//!
//! A tree is grown greedily: each node picks the (feature, threshold) pair with
//! the largest reduction in squared error, with thresholds at midpoints between
//! consecutive distinct values. When `mtry` is smaller than the number of
//! usable features, every node draws its candidate features from a stream
//! keyed by the tree's seed and the node's path from the root.
//!
//! Rows are put in a canonical order before fitting, so the fitted tree depends
//! only on the multiset of training rows and never on their input order.

use std::cmp::Ordering;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, PredictionPoint};
use crate::error::{Error, Result};
use crate::rng::{self, label};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TreeConfig {
    /// Nodes with fewer observations are not split.
    pub min_split: usize,
    /// Smallest admissible child.
    pub min_leaf: usize,
    /// `None` grows until the other rules stop it.
    pub max_depth: Option<usize>,
    /// Features sampled per node; `None` means every usable feature.
    pub mtry: Option<usize>,
}

impl Default for TreeConfig {
    fn default() -> Self {
        TreeConfig {
            min_split: 3,
            min_leaf: 1,
            max_depth: None,
            mtry: None,
        }
    }
}

impl TreeConfig {
    pub fn validate(&self, d: usize) -> Result<()> {
        if self.min_split < 2 {
            return Err(Error::invalid("min_split must be at least 2"));
        }
        if self.min_leaf < 1 {
            return Err(Error::invalid("min_leaf must be at least 1"));
        }
        if let Some(m) = self.mtry {
            if m < 1 || m > d {
                return Err(Error::invalid(format!(
                    "mtry must lie in [1, {d}], got {m}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf {
        value: f64,
        count: usize,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeModel {
    nodes: Vec<Node>,
    response_range: (f64, f64),
    n_features: usize,
}

impl TreeModel {
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    /// `(min, max)` of the responses the tree was trained on.
    pub fn response_range(&self) -> (f64, f64) {
        self.response_range
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, Node::Leaf { .. }))
            .count()
    }

    /// Index of the leaf reached by `x`. Goes left iff `x[feature] <= threshold`.
    pub fn leaf_index(&self, x: &[f64]) -> usize {
        let mut id = 0;
        loop {
            match self.nodes[id] {
                Node::Leaf { .. } => return id,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => id = if x[feature] <= threshold { left } else { right },
            }
        }
    }

    pub(crate) fn predict_unchecked(&self, x: &[f64]) -> f64 {
        match self.nodes[self.leaf_index(x)] {
            Node::Leaf { value, .. } => value,
            Node::Split { .. } => unreachable!("leaf_index returns leaves"),
        }
    }

    pub fn predict(&self, x: &PredictionPoint) -> Result<f64> {
        x.check_dim(self.n_features)?;
        Ok(self.predict_unchecked(x.coords()))
    }
}

/// Fits a tree to every row of `sample`, allowing splits on all features.
pub fn fit_tree(sample: &Dataset, config: &TreeConfig, omega_seed: u64) -> Result<TreeModel> {
    let rows: Vec<usize> = (0..sample.n()).collect();
    let features: Vec<usize> = (0..sample.d()).collect();
    fit_rows(sample, &rows, &features, config, omega_seed)
}

/// Fits a tree to `data` restricted to `rows`, splitting only on `features`
/// (ascending, distinct column indices).
pub fn fit_rows(
    data: &Dataset,
    rows: &[usize],
    features: &[usize],
    config: &TreeConfig,
    omega_seed: u64,
) -> Result<TreeModel> {
    if rows.is_empty() {
        return Err(Error::EmptySample);
    }
    if features.is_empty() {
        return Err(Error::invalid("trees need at least one usable feature"));
    }
    config.validate(data.d())?;
    Ok(Grower::new(data, rows, features, config, omega_seed).grow())
}

struct Candidate {
    gain: f64,
    feature: usize,
    threshold: f64,
    n_left: usize,
}

struct Grower<'a> {
    config: &'a TreeConfig,
    seed: u64,
    n_features: usize,
    /// Global column index of each usable feature.
    features: &'a [usize],
    k: usize,
    /// Local column-major copy: `x[f * k + i]`.
    x: Vec<f64>,
    y: Vec<f64>,
    /// Per feature, local row ids sorted by value; a node owns the same
    /// `[start, end)` range in every feature's ordering.
    order: Vec<u32>,
    goes_left: Vec<bool>,
    scratch: Vec<u32>,
    /// `reciprocals[i] = 1 / i`.
    reciprocals: Vec<f64>,
}

impl<'a> Grower<'a> {
    fn new(
        data: &Dataset,
        rows: &[usize],
        features: &'a [usize],
        config: &'a TreeConfig,
        seed: u64,
    ) -> Self {
        let k = rows.len();
        let p = features.len();
        let response = data.response();

        let mut canonical = rows.to_vec();
        canonical.sort_unstable_by(|&a, &b| {
            for &f in features {
                match data.value(a, f).total_cmp(&data.value(b, f)) {
                    Ordering::Equal => {}
                    other => return other,
                }
            }
            response[a].total_cmp(&response[b])
        });

        let mut x = Vec::with_capacity(p * k);
        for &f in features {
            x.extend(canonical.iter().map(|&r| data.value(r, f)));
        }
        let y: Vec<f64> = canonical.iter().map(|&r| response[r]).collect();

        let mut order = Vec::with_capacity(p * k);
        for f in 0..p {
            let col = &x[f * k..(f + 1) * k];
            let start = order.len();
            order.extend(0..k as u32);
            // The canonical row order already sorts the first feature.
            if f > 0 {
                order[start..].sort_unstable_by(|&a, &b| {
                    col[a as usize].total_cmp(&col[b as usize]).then(a.cmp(&b))
                });
            }
        }

        Grower {
            config,
            seed,
            n_features: data.d(),
            features,
            k,
            x,
            y,
            order,
            goes_left: vec![false; k],
            scratch: Vec::with_capacity(k),
            reciprocals: (0..=k).map(|i| 1.0 / i as f64).collect(),
        }
    }

    fn grow(mut self) -> TreeModel {
        let (lo, hi) = self
            .y
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        let mut nodes = vec![Node::Leaf {
            value: 0.0,
            count: 0,
        }];
        // (node id, start, end, depth, path key)
        let mut stack = vec![(
            0usize,
            0usize,
            self.k,
            0usize,
            rng::derive(self.seed, &[label::OMEGA]),
        )];
        while let Some((id, start, end, depth, path)) = stack.pop() {
            let count = end - start;
            let members = &self.order[start..end];
            let (mut sum, mut y_lo, mut y_hi) = (0.0, f64::INFINITY, f64::NEG_INFINITY);
            for &i in members {
                let v = self.y[i as usize];
                sum += v;
                y_lo = y_lo.min(v);
                y_hi = y_hi.max(v);
            }
            let leaf = Node::Leaf {
                value: (sum / count as f64).clamp(y_lo, y_hi),
                count,
            };
            let splittable = count >= self.config.min_split
                && self.config.max_depth.is_none_or(|m| depth < m)
                && y_lo < y_hi;
            let best = if splittable {
                self.best_split(start, end, sum, path)
            } else {
                None
            };
            let Some(best) = best else {
                nodes[id] = leaf;
                continue;
            };
            self.partition(start, end, &best);
            let left = nodes.len();
            let right = left + 1;
            nodes.push(Node::Leaf {
                value: 0.0,
                count: 0,
            });
            nodes.push(Node::Leaf {
                value: 0.0,
                count: 0,
            });
            nodes[id] = Node::Split {
                feature: self.features[best.feature],
                threshold: best.threshold,
                left,
                right,
            };
            let mid = start + best.n_left;
            stack.push((right, mid, end, depth + 1, rng::derive(path, &[2])));
            stack.push((left, start, mid, depth + 1, rng::derive(path, &[1])));
        }
        TreeModel {
            nodes,
            response_range: (lo, hi),
            n_features: self.n_features,
        }
    }

    fn candidates(&self, path: u64) -> Vec<usize> {
        let p = self.features.len();
        match self.config.mtry {
            Some(m) if m < p => {
                let mut picked = index::sample(&mut rng::stream(path, &[]), p, m).into_vec();
                picked.sort_unstable();
                picked
            }
            _ => (0..p).collect(),
        }
    }

    fn best_split(&self, start: usize, end: usize, sum: f64, path: u64) -> Option<Candidate> {
        let n = end - start;
        let inv = &self.reciprocals;
        let inv_n = inv[n];
        let min_leaf = self.config.min_leaf;
        let mut best: Option<Candidate> = None;
        for f in self.candidates(path) {
            let ids = &self.order[f * self.k + start..f * self.k + end];
            let col = &self.x[f * self.k..(f + 1) * self.k];
            let mut sum_left = 0.0;
            for pos in 0..n - 1 {
                let i = ids[pos] as usize;
                sum_left += self.y[i];
                let n_left = pos + 1;
                let n_right = n - n_left;
                if n_left < min_leaf || n_right < min_leaf {
                    continue;
                }
                let here = col[i];
                let next = col[ids[pos + 1] as usize];
                if here >= next {
                    continue;
                }
                let diff = sum_left * inv[n_left] - (sum - sum_left) * inv[n_right];
                let gain = (n_left * n_right) as f64 * inv_n * diff * diff;
                if gain > best.as_ref().map_or(0.0, |b| b.gain) {
                    let mut threshold = here + (next - here) / 2.0;
                    if threshold >= next {
                        threshold = here;
                    }
                    best = Some(Candidate {
                        gain,
                        feature: f,
                        threshold,
                        n_left,
                    });
                }
            }
        }
        best
    }

    /// Stable-partitions every feature ordering of `[start, end)` into the
    /// left child followed by the right child.
    fn partition(&mut self, start: usize, end: usize, split: &Candidate) {
        let k = self.k;
        let chosen = &self.order[split.feature * k + start..split.feature * k + end];
        for (pos, &i) in chosen.iter().enumerate() {
            self.goes_left[i as usize] = pos < split.n_left;
        }
        for f in 0..self.features.len() {
            if f == split.feature {
                continue;
            }
            let range = &mut self.order[f * k + start..f * k + end];
            self.scratch.clear();
            let mut write = 0;
            for read in 0..range.len() {
                let i = range[read];
                if self.goes_left[i as usize] {
                    range[write] = i;
                    write += 1;
                } else {
                    self.scratch.push(i);
                }
            }
            range[write..].copy_from_slice(&self.scratch);
        }
    }
}

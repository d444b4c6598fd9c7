use serde::{Deserialize, Serialize};

use super::{quantile_of, Loss};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TreeNode {
    Split { feature: u32, threshold: f64, left: u32, right: u32 },
    Leaf { value: f64 },
}

/// Binary regression tree; `x[feature] <= threshold` goes left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    pub nodes: Vec<TreeNode>,
}

impl RegressionTree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut k = 0;
        loop {
            match self.nodes[k] {
                TreeNode::Leaf { value } => return value,
                TreeNode::Split { feature, threshold, left, right } => {
                    k = if x[feature as usize] <= threshold { left } else { right } as usize;
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[TreeNode], k: usize) -> usize {
            match nodes[k] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => 1 + walk(nodes, left as usize).max(walk(nodes, right as usize)),
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, TreeNode::Leaf { .. })).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GbtParams {
    pub n_estimators: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
}

impl GbtParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || self.max_depth == 0 || self.min_samples_leaf == 0 {
            return Err(Error::InvalidParameter("GBT learning rate, depth and leaf size must be positive".into()));
        }
        Ok(())
    }
}

/// `base + learning_rate * sum of tree outputs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtModel {
    pub base: f64,
    pub learning_rate: f64,
    pub trees: Vec<RegressionTree>,
}

impl GbtModel {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.base + self.learning_rate * self.trees.iter().map(|t| t.predict(x)).sum::<f64>()
    }
}

/// Feature columns presorted once per fit.
struct Presorted {
    n: usize,
    p: usize,
    /// `order[f]`: row indices by increasing value of feature `f`.
    order: Vec<Vec<u32>>,
    /// `values[f][i] = x[order[f][i], f]`.
    values: Vec<Vec<f64>>,
}

impl Presorted {
    fn new(x: &[f64], n: usize, p: usize) -> Self {
        let mut order = Vec::with_capacity(p);
        let mut values = Vec::with_capacity(p);
        for f in 0..p {
            let mut idx: Vec<u32> = (0..n as u32).collect();
            idx.sort_by(|&a, &b| x[a as usize * p + f].total_cmp(&x[b as usize * p + f]).then(a.cmp(&b)));
            values.push(idx.iter().map(|&r| x[r as usize * p + f]).collect());
            order.push(idx);
        }
        Self { n, p, order, values }
    }
}

#[derive(Clone, Copy)]
struct Candidate {
    gain: f64,
    feature: usize,
    threshold: f64,
}

/// Grows one depth-limited tree on `grad` level by level, scanning each
/// presorted feature once per level. Leaves hold no values yet; returns the
/// tree and the leaf node of every row.
fn grow_tree(data: &Presorted, x: &[f64], grad: &[f64], max_depth: usize, min_leaf: usize) -> (Vec<TreeNode>, Vec<u32>) {
    let n = data.n;
    let p = data.p;
    let mut nodes = vec![TreeNode::Leaf { value: 0.0 }];
    let mut node_of = vec![0u32; n];
    let mut sum = vec![grad.iter().sum::<f64>()];
    let mut sumsq = vec![grad.iter().map(|g| g * g).sum::<f64>()];
    let mut count = vec![n];
    let mut active = vec![true];

    for _ in 0..max_depth {
        let m = nodes.len();
        let mut best: Vec<Option<Candidate>> = vec![None; m];
        let mut left_sum = vec![0.0; m];
        let mut left_count = vec![0usize; m];
        let mut last = vec![f64::NAN; m];
        let splittable: Vec<bool> = (0..m).map(|k| active[k] && count[k] >= 2 * min_leaf).collect();
        if !splittable.iter().any(|&s| s) {
            break;
        }
        for f in 0..p {
            left_sum.fill(0.0);
            left_count.fill(0);
            for (&r, &v) in data.order[f].iter().zip(&data.values[f]) {
                let k = node_of[r as usize] as usize;
                if !splittable[k] {
                    continue;
                }
                let nl = left_count[k];
                if nl >= min_leaf && v > last[k] && count[k] - nl >= min_leaf {
                    let sl = left_sum[k];
                    let sr = sum[k] - sl;
                    let nr = count[k] - nl;
                    let gain = sl * sl / nl as f64 + sr * sr / nr as f64 - sum[k] * sum[k] / count[k] as f64;
                    if best[k].is_none_or(|b| gain > b.gain) {
                        let mid = 0.5 * (last[k] + v);
                        let threshold = if mid < v { mid } else { last[k] };
                        best[k] = Some(Candidate { gain, feature: f, threshold });
                    }
                }
                left_sum[k] += grad[r as usize];
                left_count[k] += 1;
                last[k] = v;
            }
        }
        let mut split_any = false;
        for k in 0..m {
            active[k] = false;
            let Some(c) = best[k] else { continue };
            if !(c.gain > 1e-12 * sumsq[k]) {
                continue;
            }
            let left = nodes.len() as u32;
            nodes[k] = TreeNode::Split { feature: c.feature as u32, threshold: c.threshold, left, right: left + 1 };
            for _ in 0..2 {
                nodes.push(TreeNode::Leaf { value: 0.0 });
                sum.push(0.0);
                sumsq.push(0.0);
                count.push(0);
                active.push(true);
            }
            split_any = true;
        }
        if !split_any {
            break;
        }
        for r in 0..n {
            let k = node_of[r] as usize;
            if let TreeNode::Split { feature, threshold, left, right } = nodes[k] {
                let child = if x[r * p + feature as usize] <= threshold { left } else { right };
                node_of[r] = child;
                let c = child as usize;
                sum[c] += grad[r];
                sumsq[c] += grad[r] * grad[r];
                count[c] += 1;
            }
        }
    }
    (nodes, node_of)
}

/// Stagewise boosting of regression trees on the negative loss gradient.
/// Squared loss fits residuals with mean leaves; pinball loss fits the
/// gradient sign and sets each leaf to the residual quantile. Returns the
/// model and the training loss after every stage (index 0 = base only).
pub fn fit_gbt(x: &[f64], y: &[f64], n_features: usize, params: &GbtParams, loss: Loss) -> Result<(GbtModel, Vec<f64>)> {
    params.validate()?;
    loss.validate()?;
    let n = y.len();
    if n == 0 || x.len() != n * n_features {
        return Err(Error::DimensionMismatch { expected: n * n_features, got: x.len() });
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("non-finite training data".into()));
    }
    let base = match loss {
        Loss::Squared => y.iter().sum::<f64>() / n as f64,
        Loss::Pinball { q } => quantile_of(&mut y.to_vec(), q),
    };
    let mut model = GbtModel { base, learning_rate: params.learning_rate, trees: Vec::with_capacity(params.n_estimators) };
    let mut f = vec![base; n];
    let mut history = vec![loss.mean(y, &f)];
    if params.n_estimators == 0 {
        return Ok((model, history));
    }
    let data = Presorted::new(x, n, n_features);
    let mut grad = vec![0.0; n];
    for _ in 0..params.n_estimators {
        for ((g, &t), &fi) in grad.iter_mut().zip(y).zip(&f) {
            *g = loss.negative_gradient(t, fi);
        }
        let (mut nodes, leaf_of) = grow_tree(&data, x, &grad, params.max_depth, params.min_samples_leaf);
        match loss {
            Loss::Squared => {
                let mut s = vec![0.0; nodes.len()];
                let mut c = vec![0usize; nodes.len()];
                for (r, &k) in leaf_of.iter().enumerate() {
                    s[k as usize] += y[r] - f[r];
                    c[k as usize] += 1;
                }
                for (k, node) in nodes.iter_mut().enumerate() {
                    if let TreeNode::Leaf { value } = node {
                        *value = if c[k] > 0 { s[k] / c[k] as f64 } else { 0.0 };
                    }
                }
            }
            Loss::Pinball { q } => {
                let mut residuals: Vec<Vec<f64>> = vec![Vec::new(); nodes.len()];
                for (r, &k) in leaf_of.iter().enumerate() {
                    residuals[k as usize].push(y[r] - f[r]);
                }
                for (node, res) in nodes.iter_mut().zip(residuals.iter_mut()) {
                    if let TreeNode::Leaf { value } = node {
                        *value = if res.is_empty() { 0.0 } else { quantile_of(res, q) };
                    }
                }
            }
        }
        let tree = RegressionTree { nodes };
        for (r, fi) in f.iter_mut().enumerate() {
            if let TreeNode::Leaf { value } = tree.nodes[leaf_of[r] as usize] {
                *fi += params.learning_rate * value;
            }
        }
        model.trees.push(tree);
        history.push(loss.mean(y, &f));
    }
    Ok((model, history))
}

//! Random forest of CART classification trees (Gini splits, bootstrap
//! resamples, `mtry` random candidate features per node).
//!
//! Tree `t` draws from its own RNG stream derived from `(seed, t)`, so a
//! fitted forest does not depend on how many workers built it.

use rand::seq::index::sample;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::ClassifyError;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub ntree: usize,
    /// Features tried per split; `None` means ⌈√p⌉.
    pub mtry: Option<usize>,
    pub min_leaf: usize,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self { ntree: 200, mtry: None, min_leaf: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "lowercase")]
pub enum Node {
    Leaf { fraction: f64 },
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

/// Flat binary tree; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf_fraction(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { fraction } => return fraction,
                Node::Split { feature, threshold, left, right } => {
                    i = if x[feature] <= threshold { left } else { right };
                }
            }
        }
    }

    pub fn is_single_leaf(&self) -> bool {
        self.nodes.len() == 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub ntree: usize,
    pub mtry: usize,
    pub p: usize,
    pub trees: Vec<Tree>,
}

impl ForestModel {
    /// Mean leaf class-1 fraction across trees.
    pub fn predict_proba(&self, x: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.leaf_fraction(x)).sum::<f64>() / self.trees.len() as f64
    }
}

fn gini(pos: f64, total: f64) -> f64 {
    if total <= 0.0 {
        return 0.0;
    }
    let f = pos / total;
    2.0 * f * (1.0 - f)
}

struct TreeBuilder<'a> {
    x: &'a [Vec<f64>],
    z: &'a [bool],
    mtry: usize,
    min_leaf: usize,
}

impl TreeBuilder<'_> {
    fn best_split(&self, idx: &[usize], rng: &mut rng::Rng) -> Option<(usize, f64, Vec<usize>, Vec<usize>)> {
        let p = self.x[0].len();
        let n = idx.len() as f64;
        let total_pos = idx.iter().filter(|&&i| self.z[i]).count() as f64;
        let mut best: Option<(f64, usize, f64)> = None;
        let mut order = idx.to_vec();
        for feature in sample(rng, p, self.mtry.min(p)).into_iter() {
            order.sort_by(|&a, &b| self.x[a][feature].total_cmp(&self.x[b][feature]));
            let mut left_pos = 0.0;
            for k in 0..order.len() - 1 {
                if self.z[order[k]] {
                    left_pos += 1.0;
                }
                let (lo, hi) = (self.x[order[k]][feature], self.x[order[k + 1]][feature]);
                let left_n = (k + 1) as f64;
                if lo == hi || k + 1 < self.min_leaf || order.len() - k - 1 < self.min_leaf {
                    continue;
                }
                let right_n = n - left_n;
                let impurity = (left_n * gini(left_pos, left_n) + right_n * gini(total_pos - left_pos, right_n)) / n;
                if best.is_none_or(|(b, _, _)| impurity < b) {
                    best = Some((impurity, feature, 0.5 * (lo + hi)));
                }
            }
        }
        let (_, feature, threshold) = best?;
        let (left, right) = idx.iter().partition(|&&i| self.x[i][feature] <= threshold);
        Some((feature, threshold, left, right))
    }

    fn build(&self, sample_idx: Vec<usize>, rng: &mut rng::Rng) -> Tree {
        let mut nodes = vec![Node::Leaf { fraction: 0.0 }];
        let mut stack = vec![(0usize, sample_idx)];
        while let Some((slot, idx)) = stack.pop() {
            let pos = idx.iter().filter(|&&i| self.z[i]).count();
            let fraction = pos as f64 / idx.len() as f64;
            let pure = pos == 0 || pos == idx.len();
            if pure || idx.len() < 2 * self.min_leaf {
                nodes[slot] = Node::Leaf { fraction };
                continue;
            }
            match self.best_split(&idx, rng) {
                None => nodes[slot] = Node::Leaf { fraction },
                Some((feature, threshold, left, right)) => {
                    let (l, r) = (nodes.len(), nodes.len() + 1);
                    nodes.push(Node::Leaf { fraction: 0.0 });
                    nodes.push(Node::Leaf { fraction: 0.0 });
                    nodes[slot] = Node::Split { feature, threshold, left: l, right: r };
                    stack.push((r, right));
                    stack.push((l, left));
                }
            }
        }
        Tree { nodes }
    }
}

fn validate(x: &[Vec<f64>], z: &[bool], params: &ForestParams) -> Result<(usize, usize), ClassifyError> {
    if x.is_empty() || x.len() != z.len() {
        return Err(ClassifyError::InvalidArgument("need equal, non-zero numbers of rows and labels".into()));
    }
    let p = x[0].len();
    let mtry = params.mtry.unwrap_or_else(|| (p as f64).sqrt().ceil() as usize);
    if params.ntree < 1 {
        return Err(ClassifyError::InvalidArgument("ntree must be >= 1".into()));
    }
    if mtry < 1 || mtry > p {
        return Err(ClassifyError::InvalidArgument(format!("mtry must lie in 1..={p}")));
    }
    if params.min_leaf < 1 {
        return Err(ClassifyError::InvalidArgument("min_leaf must be >= 1".into()));
    }
    Ok((p, mtry))
}

fn fit_trees(
    x: &[Vec<f64>],
    z: &[bool],
    params: &ForestParams,
    seed: u64,
) -> Result<(ForestModel, Vec<Vec<bool>>), ClassifyError> {
    let (p, mtry) = validate(x, z, params)?;
    let builder = TreeBuilder { x, z, mtry, min_leaf: params.min_leaf };
    let n = x.len();
    let built = crate::par::map_range(params.ntree, |t| {
        let mut rng = rng::stream(rng::derive_seed(seed, t as u64), 0);
        let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
        let mut in_bag = vec![false; n];
        for &i in &idx {
            in_bag[i] = true;
        }
        (builder.build(idx, &mut rng), in_bag)
    });
    let (trees, bags) = built.into_iter().unzip();
    Ok((ForestModel { ntree: params.ntree, mtry, p, trees }, bags))
}

pub fn fit_forest(x: &[Vec<f64>], z: &[bool], params: &ForestParams, seed: u64) -> Result<ForestModel, ClassifyError> {
    fit_trees(x, z, params, seed).map(|(m, _)| m)
}

/// Fits a forest and returns out-of-bag probabilities (`None` for rows that
/// were in every bootstrap sample).
pub fn fit_forest_oob(
    x: &[Vec<f64>],
    z: &[bool],
    params: &ForestParams,
    seed: u64,
) -> Result<(ForestModel, Vec<Option<f64>>), ClassifyError> {
    let (model, bags) = fit_trees(x, z, params, seed)?;
    let oob = (0..x.len())
        .map(|i| {
            let votes: Vec<f64> = model
                .trees
                .iter()
                .zip(&bags)
                .filter(|(_, bag)| !bag[i])
                .map(|(t, _)| t.leaf_fraction(&x[i]))
                .collect();
            (!votes.is_empty()).then(|| votes.iter().sum::<f64>() / votes.len() as f64)
        })
        .collect();
    Ok((model, oob))
}

// SPDX-License-Identifier: Apache-2.0

//! CART decision trees (Gini impurity, axis-aligned threshold splits) and
//! bagged forests of them.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DetectError, FeatureVector, FEATURES};
use crate::par;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    /// `None` grows until leaves are pure or unsplittable.
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
    /// Features examined per split; `None` means all six.
    pub max_features: Option<usize>,
    pub rng_seed: u64,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self {
            max_depth: None,
            min_samples_split: 2,
            min_samples_leaf: 1,
            max_features: None,
            rng_seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum TreeNode {
    /// Fraction of positive training samples reaching this leaf.
    Leaf { positive: f64, count: usize },
    /// Samples with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub nodes: Vec<TreeNode>,
}

fn gini(pos: usize, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let p = pos as f64 / n as f64;
    2.0 * p * (1.0 - p)
}

struct Grower<'a> {
    x: &'a [FeatureVector],
    y: &'a [bool],
    params: TreeParams,
    rng: ChaCha8Rng,
    nodes: Vec<TreeNode>,
}

impl Grower<'_> {
    fn leaf(&mut self, idx: &[usize]) -> usize {
        let pos = idx.iter().filter(|&&k| self.y[k]).count();
        self.nodes.push(TreeNode::Leaf {
            positive: pos as f64 / idx.len().max(1) as f64,
            count: idx.len(),
        });
        self.nodes.len() - 1
    }

    /// Best split over a random feature subset, falling back to the other
    /// features when the subset is constant on `idx`.
    fn best_split(&mut self, idx: &[usize]) -> Option<(usize, f64, f64)> {
        match self.params.max_features {
            Some(m) if m < FEATURES => {
                let mut chosen = index::sample(&mut self.rng, FEATURES, m.max(1)).into_vec();
                chosen.sort_unstable();
                self.best_split_over(idx, &chosen).or_else(|| {
                    let rest: Vec<usize> = (0..FEATURES).filter(|f| !chosen.contains(f)).collect();
                    self.best_split_over(idx, &rest)
                })
            }
            _ => self.best_split_over(idx, &[0, 1, 2, 3, 4, 5]),
        }
    }

    /// Best (feature, threshold, weighted child impurity) over `features`.
    fn best_split_over(&self, idx: &[usize], features: &[usize]) -> Option<(usize, f64, f64)> {
        let n = idx.len();
        let total_pos = idx.iter().filter(|&&k| self.y[k]).count();
        let min_leaf = self.params.min_samples_leaf.max(1);
        let mut best: Option<(usize, f64, f64)> = None;
        let mut order: Vec<(f64, bool)> = Vec::with_capacity(n);
        for &f in features {
            order.clear();
            order.extend(idx.iter().map(|&k| (self.x[k].0[f], self.y[k])));
            order.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut left_pos = 0;
            for cut in 1..n {
                left_pos += order[cut - 1].1 as usize;
                let (lo, hi) = (order[cut - 1].0, order[cut].0);
                if lo == hi || cut < min_leaf || n - cut < min_leaf {
                    continue;
                }
                let score = (cut as f64 * gini(left_pos, cut)
                    + (n - cut) as f64 * gini(total_pos - left_pos, n - cut))
                    / n as f64;
                if best.is_none_or(|(_, _, s)| score < s) {
                    let mut threshold = lo + (hi - lo) / 2.0;
                    if threshold >= hi {
                        threshold = lo;
                    }
                    best = Some((f, threshold, score));
                }
            }
        }
        best
    }

    fn grow(&mut self, idx: &[usize], depth: usize) -> usize {
        let pos = idx.iter().filter(|&&k| self.y[k]).count();
        let pure = pos == 0 || pos == idx.len();
        let depth_done = self.params.max_depth.is_some_and(|d| depth >= d);
        if pure || depth_done || idx.len() < self.params.min_samples_split.max(2) {
            return self.leaf(idx);
        }
        let Some((feature, threshold, _)) = self.best_split(idx) else {
            return self.leaf(idx);
        };
        let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&k| self.x[k].0[feature] <= threshold);
        let me = self.nodes.len();
        self.nodes.push(TreeNode::Leaf { positive: 0.0, count: 0 });
        let left = self.grow(&l, depth + 1);
        let right = self.grow(&r, depth + 1);
        self.nodes[me] = TreeNode::Split {
            feature,
            threshold,
            left,
            right,
        };
        me
    }
}

fn check_training(x: &[FeatureVector], y: &[bool]) -> Result<(), DetectError> {
    if x.len() != y.len() {
        return Err(DetectError::Length(x.len(), y.len()));
    }
    if x.is_empty() {
        return Err(DetectError::Empty);
    }
    if y.iter().all(|&v| v) || y.iter().all(|&v| !v) {
        return Err(DetectError::SingleClass);
    }
    Ok(())
}

impl DecisionTree {
    pub fn train(x: &[FeatureVector], y: &[bool], params: TreeParams) -> Result<Self, DetectError> {
        check_training(x, y)?;
        let idx: Vec<usize> = (0..x.len()).collect();
        Ok(Self::grow_on(x, y, &idx, params))
    }

    fn grow_on(x: &[FeatureVector], y: &[bool], idx: &[usize], params: TreeParams) -> Self {
        let mut g = Grower {
            x,
            y,
            params,
            rng: ChaCha8Rng::seed_from_u64(params.rng_seed),
            nodes: Vec::new(),
        };
        g.grow(idx, 0);
        Self { nodes: g.nodes }
    }

    pub fn score(&self, x: &FeatureVector) -> f64 {
        let mut k = 0;
        loop {
            match self.nodes[k] {
                TreeNode::Leaf { positive, .. } => return positive,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => k = if x.0[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn predict(&self, x: &FeatureVector) -> bool {
        self.score(x) > 0.5
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[TreeNode], k: usize) -> usize {
            match nodes[k] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_features: usize,
    pub bootstrap: bool,
    pub max_depth: Option<usize>,
    pub rng_seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_features: 2,
            bootstrap: true,
            max_depth: None,
            rng_seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    pub trees: Vec<DecisionTree>,
}

impl RandomForest {
    /// Each tree draws its bootstrap sample and feature subsets from its own
    /// stream derived from `rng_seed`, so the result does not depend on
    /// thread scheduling.
    pub fn train(x: &[FeatureVector], y: &[bool], params: ForestParams) -> Result<Self, DetectError> {
        check_training(x, y)?;
        if params.n_trees == 0 {
            return Err(DetectError::Params("forest needs at least one tree".into()));
        }
        let mut master = ChaCha8Rng::seed_from_u64(params.rng_seed);
        let tree_seeds: Vec<u64> = (0..params.n_trees).map(|_| master.gen()).collect();
        let trees = par::map(&tree_seeds, |&s| {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let idx: Vec<usize> = if params.bootstrap {
                (0..x.len()).map(|_| rng.gen_range(0..x.len())).collect()
            } else {
                (0..x.len()).collect()
            };
            let tp = TreeParams {
                max_depth: params.max_depth,
                max_features: Some(params.max_features),
                rng_seed: rng.gen(),
                ..TreeParams::default()
            };
            DecisionTree::grow_on(x, y, &idx, tp)
        });
        Ok(Self { trees })
    }

    /// Mean leaf probability over all trees.
    pub fn score(&self, x: &FeatureVector) -> f64 {
        self.trees.iter().map(|t| t.score(x)).sum::<f64>() / self.trees.len() as f64
    }

    pub fn predict(&self, x: &FeatureVector) -> bool {
        self.score(x) > 0.5
    }
}

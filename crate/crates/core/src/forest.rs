//! Random forest of CART trees for binary classification.
//!
//! Trees split on Gini impurity over a random subset of features and are
//! grown on bootstrap resamples. Tree `i` draws all of its randomness from
//! its own ChaCha stream, so training gives identical forests whether the
//! trees are grown sequentially or in parallel.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::par::{self, Execution};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    /// `None` grows trees until leaves are pure.
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    /// Features tried per split; `None` means `ceil(sqrt(n_features))`.
    pub max_features: Option<usize>,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 100,
            max_depth: None,
            min_samples_split: 2,
            max_features: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum Node {
    Leaf {
        positive: bool,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> bool {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { positive } => return *positive,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    pub params: ForestParams,
    pub n_features: usize,
    trees: Vec<Tree>,
}

fn gini(pos: usize, total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let p = pos as f64 / total as f64;
    2.0 * p * (1.0 - p)
}

struct Builder<'a> {
    x: &'a [Vec<f64>],
    y: &'a [bool],
    params: &'a ForestParams,
    mtry: usize,
    nodes: Vec<Node>,
}

impl Builder<'_> {
    fn leaf(&mut self, pos: usize, total: usize) -> usize {
        // Ties go to the positive class.
        self.nodes.push(Node::Leaf {
            positive: 2 * pos >= total,
        });
        self.nodes.len() - 1
    }

    fn best_split(&self, idx: &[usize], features: &[usize]) -> Option<(usize, f64, f64)> {
        let total = idx.len();
        let total_pos = idx.iter().filter(|&&i| self.y[i]).count();
        let mut best: Option<(usize, f64, f64)> = None;
        let mut sorted = idx.to_vec();
        for &f in features {
            sorted.sort_by(|&a, &b| self.x[a][f].total_cmp(&self.x[b][f]).then(a.cmp(&b)));
            let mut left_pos = 0;
            for k in 0..total - 1 {
                if self.y[sorted[k]] {
                    left_pos += 1;
                }
                let (v, next) = (self.x[sorted[k]][f], self.x[sorted[k + 1]][f]);
                if v == next {
                    continue;
                }
                let nl = k + 1;
                let nr = total - nl;
                let score =
                    (nl as f64 * gini(left_pos, nl) + nr as f64 * gini(total_pos - left_pos, nr)) / total as f64;
                if best.is_none_or(|b| score < b.2) {
                    let mid = v + (next - v) / 2.0;
                    best = Some((f, if mid < next { mid } else { v }, score));
                }
            }
        }
        best
    }

    fn grow(&mut self, idx: Vec<usize>, depth: usize, rng: &mut ChaCha8Rng) -> usize {
        let total = idx.len();
        let pos = idx.iter().filter(|&&i| self.y[i]).count();
        let n_features = self.x[idx[0]].len();
        if pos == 0
            || pos == total
            || total < self.params.min_samples_split
            || self.params.max_depth.is_some_and(|d| depth >= d)
        {
            return self.leaf(pos, total);
        }

        let mut feats = sample(rng, n_features, self.mtry).into_vec();
        let mut split = self.best_split(&idx, &feats);
        if split.is_none() && self.mtry < n_features {
            feats.sort_unstable();
            let rest: Vec<usize> = (0..n_features).filter(|f| feats.binary_search(f).is_err()).collect();
            split = self.best_split(&idx, &rest);
        }
        let Some((feature, threshold, _)) = split else {
            return self.leaf(pos, total);
        };

        let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| self.x[i][feature] <= threshold);
        if l.is_empty() || r.is_empty() {
            return self.leaf(pos, total);
        }
        let slot = self.nodes.len();
        self.nodes.push(Node::Leaf { positive: false });
        let left = self.grow(l, depth + 1, rng);
        let right = self.grow(r, depth + 1, rng);
        self.nodes[slot] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        slot
    }
}

fn tree_rng(seed: u64, tree: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tree as u64);
    rng
}

impl RandomForest {
    /// Fits a forest. `x` rows must all have the same length and `y` must
    /// hold at least one sample.
    pub fn fit(x: &[Vec<f64>], y: &[bool], params: ForestParams, exec: Execution) -> RandomForest {
        assert_eq!(x.len(), y.len(), "feature/label length mismatch");
        assert!(!x.is_empty(), "cannot fit on zero samples");
        let n_features = x[0].len();
        let mtry = params
            .max_features
            .unwrap_or_else(|| (n_features as f64).sqrt().ceil() as usize)
            .clamp(1, n_features.max(1));
        let n = x.len();
        let trees = par::map_range(exec, params.n_trees.max(1), |t| {
            let mut rng = tree_rng(params.seed, t);
            let boot: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            let mut b = Builder {
                x,
                y,
                params: &params,
                mtry,
                nodes: Vec::new(),
            };
            b.grow(boot, 0, &mut rng);
            Tree { nodes: b.nodes }
        });
        RandomForest {
            params,
            n_features,
            trees,
        }
    }

    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    /// Positive votes over total trees.
    pub fn positive_votes(&self, x: &[f64]) -> (usize, usize) {
        let pos = self.trees.iter().filter(|t| t.predict(x)).count();
        (pos, self.trees.len())
    }

    /// Majority vote; a tied vote predicts positive.
    pub fn predict(&self, x: &[f64]) -> bool {
        let (pos, total) = self.positive_votes(x);
        2 * pos >= total
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn xor_data() -> (Vec<Vec<f64>>, Vec<bool>) {
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..20 {
            for j in 0..20 {
                let (a, b) = (i as f64 / 20.0, j as f64 / 20.0);
                x.push(vec![a, b]);
                y.push((a < 0.5) != (b < 0.5));
            }
        }
        (x, y)
    }

    #[test]
    fn learns_axis_aligned_xor() {
        let (x, y) = xor_data();
        let params = ForestParams {
            n_trees: 15,
            seed: 3,
            ..Default::default()
        };
        let f = RandomForest::fit(&x, &y, params, Execution::Sequential);
        let correct = x.iter().zip(&y).filter(|(xi, yi)| f.predict(xi) == **yi).count();
        assert!(correct as f64 / x.len() as f64 > 0.97, "accuracy {correct}/400");
    }

    #[test]
    fn parallel_and_sequential_forests_are_identical() {
        let (x, y) = xor_data();
        let params = ForestParams {
            n_trees: 8,
            seed: 11,
            ..Default::default()
        };
        let a = RandomForest::fit(&x, &y, params, Execution::Sequential);
        let b = RandomForest::fit(&x, &y, params, Execution::Parallel);
        assert_eq!(a, b);
    }

    #[test]
    fn depth_limit_respected() {
        let (x, y) = xor_data();
        let params = ForestParams {
            n_trees: 4,
            max_depth: Some(1),
            ..Default::default()
        };
        let f = RandomForest::fit(&x, &y, params, Execution::Sequential);
        assert!(f.trees().iter().all(|t| t.depth() <= 1));
    }

    #[test]
    fn tied_vote_is_positive() {
        let f = RandomForest {
            params: ForestParams::default(),
            n_features: 1,
            trees: vec![
                Tree {
                    nodes: vec![Node::Leaf { positive: true }],
                },
                Tree {
                    nodes: vec![Node::Leaf { positive: false }],
                },
            ],
        };
        assert!(f.predict(&[0.0]));
    }
}

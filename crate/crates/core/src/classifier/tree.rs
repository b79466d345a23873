//! CART decision trees with Gini impurity over dense feature rows.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// A tree node. Samples with `value <= threshold` go left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Node {
    Split {
        feature: String,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        score: f64,
    },
}

/// Flat node list; the root is node 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub nodes: Vec<Node>,
}

impl DecisionTree {
    pub fn leaf(score: f64) -> Self {
        Self {
            nodes: vec![Node::Leaf { score }],
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        if self.nodes.is_empty() {
            0
        } else {
            walk(&self.nodes, 0)
        }
    }

    /// Structural checks: children in range and acyclic (children always
    /// follow their parent), leaf scores in [0, 1], known feature names.
    pub fn validate(&self, feature_order: &[String]) -> Result<(), String> {
        if self.nodes.is_empty() {
            return Err("tree has no nodes".into());
        }
        for (i, node) in self.nodes.iter().enumerate() {
            match node {
                Node::Leaf { score } => {
                    if !(0.0..=1.0).contains(score) {
                        return Err(format!("node {i}: leaf score {score} outside [0,1]"));
                    }
                }
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    if !feature_order.contains(feature) {
                        return Err(format!("node {i}: unknown feature {feature}"));
                    }
                    if !threshold.is_finite() {
                        return Err(format!("node {i}: threshold not finite"));
                    }
                    for c in [left, right] {
                        if *c <= i || *c >= self.nodes.len() {
                            return Err(format!("node {i}: bad child index {c}"));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    pub(crate) fn compile(&self, feature_order: &[String]) -> CompiledTree {
        CompiledTree {
            nodes: self
                .nodes
                .iter()
                .map(|n| match n {
                    Node::Leaf { score } => CNode::Leaf(*score),
                    Node::Split {
                        feature,
                        threshold,
                        left,
                        right,
                    } => CNode::Split {
                        feature: feature_order
                            .iter()
                            .position(|f| f == feature)
                            .expect("validated feature name"),
                        threshold: *threshold,
                        left: *left,
                        right: *right,
                    },
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) enum CNode {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf(f64),
}

#[derive(Debug, Clone)]
pub(crate) struct CompiledTree {
    nodes: Vec<CNode>,
}

impl CompiledTree {
    pub(crate) fn score(&self, row: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                CNode::Leaf(s) => return *s,
                CNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if row[*feature] <= *threshold { *left } else { *right },
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct TreeParams {
    pub max_depth: usize,
    pub min_leaf: usize,
    pub features_per_split: usize,
}

pub(crate) struct TreeBuilder<'a> {
    rows: &'a [Vec<f64>],
    labels: &'a [bool],
    names: &'a [String],
    params: TreeParams,
    rng: ChaCha8Rng,
    nodes: Vec<Node>,
}

struct Split {
    feature: usize,
    threshold: f64,
    impurity: f64,
}

/// Weighted Gini impurity times two: `n * 2p(1-p) = 2 * pos * neg / n`.
fn weighted_gini(pos: usize, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    2.0 * pos as f64 * (n - pos) as f64 / n as f64
}

impl<'a> TreeBuilder<'a> {
    pub(crate) fn new(
        rows: &'a [Vec<f64>],
        labels: &'a [bool],
        names: &'a [String],
        params: TreeParams,
        rng: ChaCha8Rng,
    ) -> Self {
        Self {
            rows,
            labels,
            names,
            params,
            rng,
            nodes: Vec::new(),
        }
    }

    /// Grows a tree on a bootstrap sample of the rows.
    pub(crate) fn grow_bootstrap(mut self) -> DecisionTree {
        let n = self.rows.len();
        let mut sample: Vec<usize> = (0..n).map(|_| self.rng.random_range(0..n)).collect();
        self.build(&mut sample, 0);
        DecisionTree { nodes: self.nodes }
    }

    #[cfg(test)]
    pub(crate) fn grow_all(mut self) -> DecisionTree {
        let mut sample: Vec<usize> = (0..self.rows.len()).collect();
        self.build(&mut sample, 0);
        DecisionTree { nodes: self.nodes }
    }

    fn build(&mut self, sample: &mut [usize], depth: usize) -> usize {
        let id = self.nodes.len();
        let n = sample.len();
        let pos = sample.iter().filter(|&&i| self.labels[i]).count();
        let score = if n == 0 { 0.0 } else { pos as f64 / n as f64 };
        self.nodes.push(Node::Leaf { score });

        if depth >= self.params.max_depth
            || pos == 0
            || pos == n
            || n < 2 * self.params.min_leaf.max(1)
        {
            return id;
        }
        let Some(split) = self.best_split(sample, pos) else {
            return id;
        };

        let mut k = 0;
        for j in 0..n {
            if self.rows[sample[j]][split.feature] <= split.threshold {
                sample.swap(j, k);
                k += 1;
            }
        }
        let (l, r) = sample.split_at_mut(k);
        let left = self.build(l, depth + 1);
        let right = self.build(r, depth + 1);
        self.nodes[id] = Node::Split {
            feature: self.names[split.feature].clone(),
            threshold: split.threshold,
            left,
            right,
        };
        id
    }

    fn best_split(&mut self, sample: &[usize], pos: usize) -> Option<Split> {
        let n = sample.len();
        let n_features = self.names.len();
        let mtry = self.params.features_per_split.clamp(1, n_features);
        let candidates = rand::seq::index::sample(&mut self.rng, n_features, mtry);
        let min_leaf = self.params.min_leaf.max(1);
        let parent = weighted_gini(pos, n);

        let mut best: Option<Split> = None;
        let mut order: Vec<usize> = sample.to_vec();
        for f in candidates.iter() {
            order.sort_by(|&a, &b| self.rows[a][f].total_cmp(&self.rows[b][f]));
            let mut left_pos = 0;
            for k in 0..n - 1 {
                if self.labels[order[k]] {
                    left_pos += 1;
                }
                let nl = k + 1;
                let nr = n - nl;
                if nl < min_leaf || nr < min_leaf {
                    continue;
                }
                let lo = self.rows[order[k]][f];
                let hi = self.rows[order[k + 1]][f];
                if lo >= hi {
                    continue;
                }
                let impurity = weighted_gini(left_pos, nl) + weighted_gini(pos - left_pos, nr);
                if impurity < parent - 1e-12 && best.as_ref().is_none_or(|b| impurity < b.impurity) {
                    let mid = lo + (hi - lo) / 2.0;
                    best = Some(Split {
                        feature: f,
                        threshold: if mid < hi { mid } else { lo },
                        impurity,
                    });
                }
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn single_feature_threshold_is_learned() {
        let rows: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64]).collect();
        let labels: Vec<bool> = (0..20).map(|i| i >= 10).collect();
        let names = vec!["x".to_string()];
        let params = TreeParams {
            max_depth: 3,
            min_leaf: 1,
            features_per_split: 1,
        };
        let tree = TreeBuilder::new(&rows, &labels, &names, params, ChaCha8Rng::seed_from_u64(0)).grow_all();
        assert_eq!(
            tree.nodes[0],
            Node::Split {
                feature: "x".into(),
                threshold: 9.5,
                left: 1,
                right: 2
            }
        );
        assert_eq!(tree.depth(), 1);
        tree.validate(&names).unwrap();
        let c = tree.compile(&names);
        assert_eq!(c.score(&[3.0]), 0.0);
        assert_eq!(c.score(&[12.0]), 1.0);
    }

    #[test]
    fn validation_catches_bad_trees() {
        let names = vec!["x".to_string()];
        assert!(DecisionTree::leaf(1.5).validate(&names).is_err());
        let cyclic = DecisionTree {
            nodes: vec![Node::Split {
                feature: "x".into(),
                threshold: 0.0,
                left: 0,
                right: 0,
            }],
        };
        assert!(cyclic.validate(&names).is_err());
        let unknown = DecisionTree {
            nodes: vec![
                Node::Split {
                    feature: "y".into(),
                    threshold: 0.0,
                    left: 1,
                    right: 2,
                },
                Node::Leaf { score: 0.0 },
                Node::Leaf { score: 1.0 },
            ],
        };
        assert!(unknown.validate(&names).is_err());
    }
}

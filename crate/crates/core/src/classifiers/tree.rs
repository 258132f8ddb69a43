//! CART decision tree with the Gini criterion.
//!
//! Split thresholds are midpoints between consecutive distinct values. Among
//! equally good splits the lower feature index wins, then the lower threshold,
//! so a given training set always yields the same tree.

use rand::seq::index;
use serde::{Deserialize, Serialize};

use super::{argmax, check_dim, Classifier, ProbVector};
use crate::error::{Error, Result};
use crate::seed;

/// Minimum impurity decrease for a split to count as an improvement.
const MIN_GAIN: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    /// `None` grows until leaves are pure or too small to split.
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    /// Number of features examined per node. `None` examines all of them.
    pub max_features: Option<usize>,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams {
            max_depth: None,
            min_samples_leaf: 1,
            max_features: None,
        }
    }
}

impl TreeParams {
    pub fn validate(&self) -> Result<()> {
        if self.max_depth == Some(0) {
            return Err(Error::InvalidParameter("max_depth must be at least 1".into()));
        }
        if self.min_samples_leaf == 0 {
            return Err(Error::InvalidParameter("min_samples_leaf must be at least 1".into()));
        }
        if self.max_features == Some(0) {
            return Err(Error::InvalidParameter("max_features must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub feature: usize,
    pub threshold: f64,
    /// Child for `x[feature] <= threshold`.
    pub left: usize,
    /// Child for `x[feature] > threshold`.
    pub right: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub split: Option<Split>,
    /// Class histogram of the training samples reaching this node.
    pub counts: Vec<f64>,
    pub n_samples: f64,
    pub impurity: f64,
}

impl Node {
    pub fn leaf(counts: Vec<f64>) -> Self {
        let n_samples = counts.iter().sum();
        let impurity = gini(&counts, n_samples);
        Node {
            split: None,
            counts,
            n_samples,
            impurity,
        }
    }

    pub fn is_leaf(&self) -> bool {
        self.split.is_none()
    }

    /// Majority class, ties toward the lower class id.
    pub fn class(&self) -> usize {
        argmax(&self.counts)
    }
}

pub(crate) fn gini(counts: &[f64], total: f64) -> f64 {
    if total <= 0.0 {
        return 0.0;
    }
    1.0 - counts.iter().map(|c| (c / total).powi(2)).sum::<f64>()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    /// Node 0 is the root.
    pub nodes: Vec<Node>,
    pub n_features: usize,
    pub n_classes: usize,
}

struct Builder<'a> {
    features: &'a [Vec<f64>],
    labels: &'a [usize],
    n_classes: usize,
    n_features: usize,
    params: TreeParams,
    rng: seed::Rng,
    nodes: Vec<Node>,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    gain: f64,
}

impl Builder<'_> {
    fn histogram(&self, idx: &[usize]) -> Vec<f64> {
        let mut counts = vec![0.0; self.n_classes];
        for &i in idx {
            counts[self.labels[i]] += 1.0;
        }
        counts
    }

    fn candidate_features(&mut self) -> Vec<usize> {
        match self.params.max_features {
            Some(m) if m < self.n_features => {
                let mut picked = index::sample(&mut self.rng, self.n_features, m).into_vec();
                picked.sort_unstable();
                picked
            }
            _ => (0..self.n_features).collect(),
        }
    }

    fn best_split(&mut self, idx: &mut [usize], counts: &[f64], impurity: f64) -> Option<BestSplit> {
        let n = idx.len();
        let min_leaf = self.params.min_samples_leaf;
        let mut best: Option<BestSplit> = None;
        for feature in self.candidate_features() {
            let xs = self.features;
            idx.sort_by(|&a, &b| xs[a][feature].total_cmp(&xs[b][feature]).then(a.cmp(&b)));
            let mut left = vec![0.0; self.n_classes];
            for pos in 0..n - 1 {
                left[self.labels[idx[pos]]] += 1.0;
                let lo = xs[idx[pos]][feature];
                let hi = xs[idx[pos + 1]][feature];
                let n_left = pos + 1;
                if lo == hi || n_left < min_leaf || n - n_left < min_leaf {
                    continue;
                }
                let n_left = n_left as f64;
                let n_right = n as f64 - n_left;
                let right: Vec<f64> = counts.iter().zip(&left).map(|(c, l)| c - l).collect();
                let child = (n_left * gini(&left, n_left) + n_right * gini(&right, n_right)) / n as f64;
                let gain = impurity - child;
                if gain > MIN_GAIN && best.as_ref().is_none_or(|b| gain > b.gain + MIN_GAIN) {
                    let mut threshold = 0.5 * (lo + hi);
                    if threshold >= hi {
                        threshold = lo;
                    }
                    best = Some(BestSplit {
                        feature,
                        threshold,
                        gain,
                    });
                }
            }
        }
        best
    }

    fn grow(&mut self, idx: &mut [usize], depth: usize) -> usize {
        let counts = self.histogram(idx);
        let node_id = self.nodes.len();
        self.nodes.push(Node::leaf(counts.clone()));
        let impurity = self.nodes[node_id].impurity;

        let depth_ok = self.params.max_depth.is_none_or(|m| depth < m);
        if !depth_ok || impurity <= 0.0 || idx.len() < 2 * self.params.min_samples_leaf {
            return node_id;
        }
        let Some(best) = self.best_split(idx, &counts, impurity) else {
            return node_id;
        };

        let xs = self.features;
        let mut left_idx: Vec<usize> = Vec::new();
        let mut right_idx: Vec<usize> = Vec::new();
        for &i in idx.iter() {
            if xs[i][best.feature] <= best.threshold {
                left_idx.push(i);
            } else {
                right_idx.push(i);
            }
        }
        let left = self.grow(&mut left_idx, depth + 1);
        let right = self.grow(&mut right_idx, depth + 1);
        self.nodes[node_id].split = Some(Split {
            feature: best.feature,
            threshold: best.threshold,
            left,
            right,
        });
        node_id
    }
}

impl DecisionTree {
    /// Fit on the rows of `features` listed in `sample` (repeats allowed, as in
    /// a bootstrap draw).
    pub fn fit_sample(
        features: &[Vec<f64>],
        labels: &[usize],
        n_classes: usize,
        sample: &[usize],
        params: TreeParams,
        seed: u64,
    ) -> Result<Self> {
        params.validate()?;
        if sample.is_empty() {
            return Err(Error::Empty("tree training sample"));
        }
        let n_features = features[sample[0]].len();
        if n_features == 0 {
            return Err(Error::Empty("tree training data has no features"));
        }
        let mut builder = Builder {
            features,
            labels,
            n_classes,
            n_features,
            params,
            rng: seed::rng(seed),
            nodes: Vec::new(),
        };
        let mut idx = sample.to_vec();
        builder.grow(&mut idx, 0);
        Ok(DecisionTree {
            nodes: builder.nodes,
            n_features,
            n_classes,
        })
    }

    pub fn fit(
        features: &[Vec<f64>],
        labels: &[usize],
        n_classes: usize,
        params: TreeParams,
        seed: u64,
    ) -> Result<Self> {
        let sample: Vec<usize> = (0..features.len()).collect();
        Self::fit_sample(features, labels, n_classes, &sample, params, seed)
    }

    /// Assemble a tree from explicit nodes. Node 0 must be the root and every
    /// child index must point forward.
    pub fn from_nodes(nodes: Vec<Node>, n_features: usize, n_classes: usize) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::Empty("tree has no nodes"));
        }
        for (i, node) in nodes.iter().enumerate() {
            if node.counts.len() != n_classes {
                return Err(Error::DimensionMismatch {
                    expected: n_classes,
                    found: node.counts.len(),
                });
            }
            if let Some(s) = node.split {
                if s.feature >= n_features || s.left <= i || s.right <= i || s.left >= nodes.len() || s.right >= nodes.len() {
                    return Err(Error::InvalidParameter(format!("malformed split at node {i}")));
                }
            }
        }
        Ok(DecisionTree {
            nodes,
            n_features,
            n_classes,
        })
    }

    pub fn leaf_index(&self, x: &[f64]) -> usize {
        let mut id = 0;
        while let Some(s) = self.nodes[id].split {
            id = if x[s.feature] <= s.threshold { s.left } else { s.right };
        }
        id
    }

    pub fn leaf(&self, x: &[f64]) -> &Node {
        &self.nodes[self.leaf_index(x)]
    }

    /// Leaf-majority prediction.
    pub fn predict_class(&self, x: &[f64]) -> Result<usize> {
        check_dim(self.n_features, x)?;
        Ok(self.leaf(x).class())
    }

    /// Class frequencies at the leaf reached by `x`.
    pub fn leaf_frequencies(&self, x: &[f64]) -> Vec<f64> {
        let leaf = self.leaf(x);
        leaf.counts.iter().map(|c| c / leaf.n_samples).collect()
    }

    pub fn depth(&self) -> usize {
        fn walk(tree: &DecisionTree, id: usize) -> usize {
            match tree.nodes[id].split {
                None => 0,
                Some(s) => 1 + walk(tree, s.left).max(walk(tree, s.right)),
            }
        }
        walk(self, 0)
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| n.is_leaf()).count()
    }

    /// Mean decrease in Gini impurity per feature, weighted by the fraction
    /// of training samples reaching each split and normalized to sum to one.
    /// A single-leaf tree yields the zero vector.
    pub fn feature_importances(&self) -> Vec<f64> {
        let mut imp = vec![0.0; self.n_features];
        let total = self.nodes[0].n_samples;
        for node in &self.nodes {
            if let Some(s) = node.split {
                let l = &self.nodes[s.left];
                let r = &self.nodes[s.right];
                let decrease = node.n_samples * node.impurity
                    - l.n_samples * l.impurity
                    - r.n_samples * r.impurity;
                imp[s.feature] += decrease / total;
            }
        }
        let sum: f64 = imp.iter().sum();
        if sum > 0.0 {
            imp.iter_mut().for_each(|v| *v /= sum);
        }
        imp
    }

    /// Distinct features used by any split, ascending.
    pub fn split_features(&self) -> Vec<usize> {
        let mut used: Vec<usize> = self.nodes.iter().filter_map(|n| n.split.map(|s| s.feature)).collect();
        used.sort_unstable();
        used.dedup();
        used
    }
}

impl Classifier for DecisionTree {
    fn n_classes(&self) -> usize {
        self.n_classes
    }

    fn n_features(&self) -> usize {
        self.n_features
    }

    fn predict_proba(&self, x: &[f64]) -> Result<ProbVector> {
        check_dim(self.n_features, x)?;
        Ok(ProbVector::from_weights(self.leaf(x).counts.clone()))
    }

    fn predict(&self, x: &[f64]) -> Result<usize> {
        self.predict_class(x)
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn separable_stump() {
        let xs: Vec<Vec<f64>> = vec![vec![-2.0, 0.3], vec![-1.0, -0.7], vec![1.0, 0.1], vec![3.0, 0.9]];
        let ys = vec![1, 1, 0, 0];
        let tree = DecisionTree::fit(&xs, &ys, 2, TreeParams::default(), 0).unwrap();
        assert_eq!(tree.depth(), 1);
        let s = tree.nodes[0].split.unwrap();
        assert_eq!(s.feature, 0);
        assert_eq!(s.threshold, 0.0);
        assert_eq!(tree.feature_importances(), vec![1.0, 0.0]);
    }

    #[test]
    fn fits_consistent_data_exactly() {
        // Distinct values on feature 0, so some split always has positive gain.
        let xs: Vec<Vec<f64>> = (0..40).map(|i| vec![(i * 7 % 40) as f64, (i * 5 % 11) as f64]).collect();
        let ys: Vec<usize> = xs.iter().map(|x| usize::from((x[0] + x[1]) as i64 % 3 == 0)).collect();
        let tree = DecisionTree::fit(&xs, &ys, 2, TreeParams::default(), 0).unwrap();
        for (x, &y) in xs.iter().zip(&ys) {
            assert_eq!(tree.predict_class(x).unwrap(), y);
        }
    }

    #[test]
    fn depth_and_leaf_size_limits() {
        let xs: Vec<Vec<f64>> = (0..30).map(|i| vec![i as f64]).collect();
        let ys: Vec<usize> = (0..30).map(|i| i % 2).collect();
        let params = TreeParams {
            max_depth: Some(2),
            min_samples_leaf: 5,
            max_features: None,
        };
        let tree = DecisionTree::fit(&xs, &ys, 2, params, 0).unwrap();
        assert!(tree.depth() <= 2);
        for node in tree.nodes.iter().filter(|n| n.is_leaf()) {
            assert!(node.n_samples >= 5.0);
        }
    }

    #[test]
    fn leaf_tie_breaks_to_lower_class() {
        let node = Node::leaf(vec![2.0, 2.0]);
        assert_eq!(node.class(), 0);
    }

    #[test]
    fn hand_built_importances() {
        // Root on feature 0 (weight 1) drops impurity by 0.3; its right child
        // on feature 1 (weight 0.5) drops it by 0.1, i.e. 0.05 after weighting.
        let leaf = |n: f64, imp: f64| Node {
            split: None,
            counts: vec![n, 0.0],
            n_samples: n,
            impurity: imp,
        };
        let nodes = vec![
            Node {
                split: Some(Split { feature: 0, threshold: 0.0, left: 1, right: 2 }),
                counts: vec![2.0, 2.0],
                n_samples: 4.0,
                impurity: 0.5,
            },
            leaf(2.0, 0.1),
            Node {
                split: Some(Split { feature: 1, threshold: 0.0, left: 3, right: 4 }),
                counts: vec![1.0, 1.0],
                n_samples: 2.0,
                impurity: 0.3,
            },
            leaf(1.0, 0.1),
            leaf(1.0, 0.3),
        ];
        let tree = DecisionTree::from_nodes(nodes, 2, 2).unwrap();
        let imp = tree.feature_importances();
        assert!((imp[0] - 6.0 / 7.0).abs() < 1e-12, "{imp:?}");
        assert!((imp[1] - 1.0 / 7.0).abs() < 1e-12, "{imp:?}");
    }

    #[test]
    fn single_leaf_importances_are_zero() {
        let xs = vec![vec![1.0], vec![2.0]];
        let tree = DecisionTree::fit(&xs, &[0, 0], 2, TreeParams::default(), 0).unwrap();
        assert_eq!(tree.n_leaves(), 1);
        assert_eq!(tree.feature_importances(), vec![0.0]);
    }

    proptest! {
        #[test]
        fn every_split_decreases_impurity(
            rows in proptest::collection::vec((-3.0f64..3.0, -3.0f64..3.0, 0usize..3), 4..60),
            depth in 1usize..6,
        ) {
            let xs: Vec<Vec<f64>> = rows.iter().map(|r| vec![r.0, r.1]).collect();
            let ys: Vec<usize> = rows.iter().map(|r| r.2).collect();
            let params = TreeParams { max_depth: Some(depth), min_samples_leaf: 1, max_features: None };
            let tree = DecisionTree::fit(&xs, &ys, 3, params, 0).unwrap();
            for node in &tree.nodes {
                if let Some(s) = node.split {
                    let l = &tree.nodes[s.left];
                    let r = &tree.nodes[s.right];
                    let child = (l.n_samples * l.impurity + r.n_samples * r.impurity) / node.n_samples;
                    prop_assert!(child < node.impurity);
                }
            }
            let imp = tree.feature_importances();
            prop_assert!(imp.iter().all(|&v| v >= 0.0));
            if tree.depth() > 0 {
                prop_assert!((imp.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
    }
}

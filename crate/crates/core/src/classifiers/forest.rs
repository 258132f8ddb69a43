use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::{DecisionTree, TreeParams};
use super::{check_dim, Classifier, ProbVector};
use crate::error::{Error, Result};
use crate::seed;

/// Random forest of CART trees. The predicted distribution is the mean of the
/// member trees' leaf class frequencies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    pub trees: Vec<DecisionTree>,
    pub n_features: usize,
    pub n_classes: usize,
}

impl RandomForest {
    /// Every tree draws from its own seed derived from `seed` and the tree
    /// index, so parallel fitting is schedule-independent.
    pub fn fit(
        features: &[Vec<f64>],
        labels: &[usize],
        n_classes: usize,
        n_trees: usize,
        tree_params: TreeParams,
        bootstrap: bool,
        seed: u64,
    ) -> Result<Self> {
        if n_trees == 0 {
            return Err(Error::InvalidParameter("forest needs at least one tree".into()));
        }
        let n = features.len();
        let trees = (0..n_trees as u64)
            .into_par_iter()
            .map(|t| {
                let tree_seed = seed::derive(seed, &[t]);
                let sample: Vec<usize> = if bootstrap {
                    let mut rng = seed::rng(seed::derive(tree_seed, &[0xB007]));
                    (0..n).map(|_| rng.random_range(0..n)).collect()
                } else {
                    (0..n).collect()
                };
                DecisionTree::fit_sample(features, labels, n_classes, &sample, tree_params, tree_seed)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(RandomForest {
            trees,
            n_features: features[0].len(),
            n_classes,
        })
    }
}

impl Classifier for RandomForest {
    fn n_classes(&self) -> usize {
        self.n_classes
    }

    fn n_features(&self) -> usize {
        self.n_features
    }

    fn predict_proba(&self, x: &[f64]) -> Result<ProbVector> {
        check_dim(self.n_features, x)?;
        let mut acc = vec![0.0; self.n_classes];
        for tree in &self.trees {
            for (a, f) in acc.iter_mut().zip(tree.leaf_frequencies(x)) {
                *a += f;
            }
        }
        let m = self.trees.len() as f64;
        acc.iter_mut().for_each(|v| *v /= m);
        Ok(ProbVector::from_weights(acc))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_tree_forest_matches_its_tree() {
        let xs: Vec<Vec<f64>> = (0..30).map(|i| vec![(i % 7) as f64, (i % 5) as f64]).collect();
        let ys: Vec<usize> = (0..30).map(|i| usize::from(i % 3 == 0)).collect();
        let forest = RandomForest::fit(&xs, &ys, 2, 1, TreeParams { max_depth: Some(2), ..Default::default() }, false, 3).unwrap();
        let tree = &forest.trees[0];
        for x in &xs {
            assert_eq!(forest.predict_proba(x).unwrap().as_slice(), tree.leaf_frequencies(x).as_slice());
        }
    }

    #[test]
    fn fit_is_deterministic() {
        let xs: Vec<Vec<f64>> = (0..50).map(|i| vec![(i * 3 % 11) as f64, (i * 7 % 13) as f64, i as f64]).collect();
        let ys: Vec<usize> = (0..50).map(|i| i % 2).collect();
        let params = TreeParams { max_depth: Some(4), min_samples_leaf: 1, max_features: Some(2) };
        let a = RandomForest::fit(&xs, &ys, 2, 8, params, true, 11).unwrap();
        let b = RandomForest::fit(&xs, &ys, 2, 8, params, true, 11).unwrap();
        assert_eq!(a, b);
    }
}

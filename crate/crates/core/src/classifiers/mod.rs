//! Probabilistic classifiers implemented from scratch: k-nearest neighbors,
//! Gaussian naive Bayes, CART and random forest. Every model exposes a
//! per-class probability vector through [`Classifier`].

pub mod forest;
pub mod gnb;
pub mod knn;
pub mod tree;

use std::fmt;
use std::ops::Index;

use serde::{Deserialize, Serialize};

use crate::data::{stratified_kfold, Dataset};
use crate::error::{Error, Result};
use crate::seed;

pub use forest::RandomForest;
pub use gnb::GaussianNb;
pub use knn::Knn;
pub use tree::{DecisionTree, Node, Split, TreeParams};

/// Class probabilities: nonnegative entries summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        let sum: f64 = probs.iter().sum();
        if probs.is_empty() || probs.iter().any(|&p| !(p >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!(
                "not a probability vector: {probs:?}"
            )));
        }
        Ok(ProbVector(probs))
    }

    /// Normalize nonnegative weights. All-zero weights become uniform.
    pub fn from_weights(mut weights: Vec<f64>) -> Self {
        let sum: f64 = weights.iter().sum();
        if sum > 0.0 {
            weights.iter_mut().for_each(|w| *w /= sum);
        } else {
            let u = 1.0 / weights.len() as f64;
            weights.iter_mut().for_each(|w| *w = u);
        }
        ProbVector(weights)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }
}

impl Index<usize> for ProbVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Index of the largest value, ties toward the lower index.
pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn check_dim(expected: usize, x: &[f64]) -> Result<()> {
    if x.len() != expected {
        return Err(Error::DimensionMismatch {
            expected,
            found: x.len(),
        });
    }
    Ok(())
}

/// A fitted probabilistic classifier.
pub trait Classifier: Send + Sync {
    fn n_classes(&self) -> usize;

    fn n_features(&self) -> usize;

    fn predict_proba(&self, x: &[f64]) -> Result<ProbVector>;

    fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(self.predict_proba(x)?.argmax())
    }
}

impl<C: Classifier + ?Sized> Classifier for &C {
    fn n_classes(&self) -> usize {
        (**self).n_classes()
    }

    fn n_features(&self) -> usize {
        (**self).n_features()
    }

    fn predict_proba(&self, x: &[f64]) -> Result<ProbVector> {
        (**self).predict_proba(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassifierKind {
    Knn,
    Gnb,
    Tree,
    Forest,
}

impl ClassifierKind {
    /// Display name used in result tables.
    pub fn display_name(self) -> &'static str {
        match self {
            ClassifierKind::Knn => "kNN",
            ClassifierKind::Gnb => "GNB",
            ClassifierKind::Tree => "DecisionTree",
            ClassifierKind::Forest => "RandomForest",
        }
    }

    /// Hyperparameter grid used when the experiment config provides none.
    pub fn default_grid(self) -> Vec<Hyperparams> {
        match self {
            ClassifierKind::Knn => [1, 3, 5, 7, 9].into_iter().map(|k| Hyperparams::Knn { k }).collect(),
            ClassifierKind::Gnb => [1e-9, 1e-6, 1e-3]
                .into_iter()
                .map(|variance_smoothing| Hyperparams::Gnb { variance_smoothing })
                .collect(),
            ClassifierKind::Tree => [Some(3), Some(5), Some(10), None]
                .into_iter()
                .map(|max_depth| Hyperparams::Tree {
                    max_depth,
                    min_samples_leaf: 1,
                })
                .collect(),
            ClassifierKind::Forest => {
                let mut grid = Vec::new();
                for n_trees in [10, 50, 100] {
                    for max_depth in [Some(5), Some(10), None] {
                        grid.push(Hyperparams::Forest {
                            n_trees,
                            max_depth,
                            max_features: None,
                            bootstrap: true,
                        });
                    }
                }
                grid
            }
        }
    }
}

impl fmt::Display for ClassifierKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.display_name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Hyperparams {
    Knn {
        k: usize,
    },
    Gnb {
        variance_smoothing: f64,
    },
    Tree {
        max_depth: Option<usize>,
        min_samples_leaf: usize,
    },
    Forest {
        n_trees: usize,
        max_depth: Option<usize>,
        /// Features examined per split; `None` means ceil(sqrt(d)).
        max_features: Option<usize>,
        bootstrap: bool,
    },
}

impl Hyperparams {
    pub fn kind(&self) -> ClassifierKind {
        match self {
            Hyperparams::Knn { .. } => ClassifierKind::Knn,
            Hyperparams::Gnb { .. } => ClassifierKind::Gnb,
            Hyperparams::Tree { .. } => ClassifierKind::Tree,
            Hyperparams::Forest { .. } => ClassifierKind::Forest,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Model {
    Knn(Knn),
    Gnb(GaussianNb),
    Tree(DecisionTree),
    Forest(RandomForest),
}

impl Model {
    pub fn kind(&self) -> ClassifierKind {
        match self {
            Model::Knn(_) => ClassifierKind::Knn,
            Model::Gnb(_) => ClassifierKind::Gnb,
            Model::Tree(_) => ClassifierKind::Tree,
            Model::Forest(_) => ClassifierKind::Forest,
        }
    }

    fn inner(&self) -> &dyn Classifier {
        match self {
            Model::Knn(m) => m,
            Model::Gnb(m) => m,
            Model::Tree(m) => m,
            Model::Forest(m) => m,
        }
    }
}

impl Classifier for Model {
    fn n_classes(&self) -> usize {
        self.inner().n_classes()
    }

    fn n_features(&self) -> usize {
        self.inner().n_features()
    }

    fn predict_proba(&self, x: &[f64]) -> Result<ProbVector> {
        self.inner().predict_proba(x)
    }
}

/// Fit a model of the kind implied by `params`. Every class in
/// `0..train.class_count` must be present.
pub fn fit_classifier(params: &Hyperparams, train: &Dataset, seed: u64) -> Result<Model> {
    if train.has_missing() {
        return Err(Error::InvalidParameter("training data contains missing values".into()));
    }
    if let Some(absent) = train.class_counts().iter().position(|&n| n == 0) {
        return Err(Error::AbsentClass(absent));
    }
    let c = train.class_count;
    let model = match *params {
        Hyperparams::Knn { k } => Model::Knn(Knn::fit(k, train.features.clone(), train.labels.clone(), c)?),
        Hyperparams::Gnb { variance_smoothing } => Model::Gnb(GaussianNb::fit(train, variance_smoothing)?),
        Hyperparams::Tree {
            max_depth,
            min_samples_leaf,
        } => Model::Tree(DecisionTree::fit(
            &train.features,
            &train.labels,
            c,
            TreeParams {
                max_depth,
                min_samples_leaf,
                max_features: None,
            },
            seed,
        )?),
        Hyperparams::Forest {
            n_trees,
            max_depth,
            max_features,
            bootstrap,
        } => {
            let d = train.n_features();
            let max_features = max_features.unwrap_or_else(|| (d as f64).sqrt().ceil() as usize);
            Model::Forest(RandomForest::fit(
                &train.features,
                &train.labels,
                c,
                n_trees,
                TreeParams {
                    max_depth,
                    min_samples_leaf: 1,
                    max_features: Some(max_features),
                },
                bootstrap,
                seed,
            )?)
        }
    };
    Ok(model)
}

pub fn predict_proba(model: &Model, x: &[f64]) -> Result<ProbVector> {
    model.predict_proba(x)
}

/// Fraction of rows whose argmax prediction equals the label.
pub fn accuracy<C: Classifier + ?Sized>(model: &C, data: &Dataset) -> Result<f64> {
    let mut correct = 0usize;
    for (x, &y) in data.features.iter().zip(&data.labels) {
        if model.predict(x)? == y {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.n_samples() as f64)
}

const GRID_FOLDS: usize = 3;

/// Pick the grid point with the best mean accuracy under an internal
/// three-fold cross validation on `train`. Earlier grid points win ties.
pub fn grid_search(grid: &[Hyperparams], train: &Dataset, seed: u64) -> Result<Hyperparams> {
    let first = *grid.first().ok_or(Error::Empty("hyperparameter grid"))?;
    if grid.len() == 1 {
        return Ok(first);
    }
    let folds = stratified_kfold(&train.labels, GRID_FOLDS, seed)?;
    let splits: Vec<(Dataset, Dataset)> = (0..GRID_FOLDS)
        .map(|f| (train.subset(&folds.train_indices(f)), train.subset(folds.test_indices(f))))
        .collect();

    let mut best = (first, f64::NEG_INFINITY);
    for params in grid {
        let mut total = 0.0;
        for (f, (fit_part, eval_part)) in splits.iter().enumerate() {
            let model = fit_classifier(params, fit_part, seed::derive(seed, &[f as u64]))?;
            total += accuracy(&model, eval_part)?;
        }
        let mean = total / GRID_FOLDS as f64;
        if mean > best.1 {
            best = (*params, mean);
        }
    }
    Ok(best.0)
}

#[cfg(test)]
mod tests {
    use rand_distr::{Distribution, Normal};

    use super::*;

    fn blobs(n: usize, sep: f64, label_noise: f64, seed: u64) -> Dataset {
        let mut rng = seed::rng(seed);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let y = i % 2;
            let center = if y == 0 { -sep } else { sep };
            features.push(vec![center + normal.sample(&mut rng), normal.sample(&mut rng)]);
            let flip = rand::Rng::random::<f64>(&mut rng) < label_noise;
            labels.push(if flip { 1 - y } else { y });
        }
        Dataset::new(features, labels, vec!["a".into(), "b".into()], 2).unwrap()
    }

    #[test]
    fn knn_one_memorizes_training_points() {
        let data = blobs(100, 1.0, 0.2, 1);
        let model = fit_classifier(&Hyperparams::Knn { k: 1 }, &data, 0).unwrap();
        assert_eq!(accuracy(&model, &data).unwrap(), 1.0);
    }

    #[test]
    fn gnb_separates_distant_blobs() {
        let train = blobs(200, 5.0, 0.0, 2);
        let test = blobs(200, 5.0, 0.0, 3);
        let model = fit_classifier(&Hyperparams::Gnb { variance_smoothing: 1e-9 }, &train, 0).unwrap();
        assert!(accuracy(&model, &test).unwrap() >= 0.99);
    }

    #[test]
    fn plain_single_tree_forest_fits_training_data() {
        let data = blobs(120, 0.5, 0.0, 4);
        let params = Hyperparams::Forest {
            n_trees: 1,
            max_depth: None,
            max_features: Some(2),
            bootstrap: false,
        };
        let model = fit_classifier(&params, &data, 0).unwrap();
        assert_eq!(accuracy(&model, &data).unwrap(), 1.0);
    }

    #[test]
    fn absent_class_is_an_error() {
        let mut data = blobs(10, 1.0, 0.0, 5);
        data.class_count = 3;
        assert!(matches!(
            fit_classifier(&Hyperparams::Knn { k: 1 }, &data, 0).unwrap_err(),
            Error::AbsentClass(2)
        ));
    }

    #[test]
    fn probabilities_are_normalized_and_dimension_checked() {
        let data = blobs(60, 1.0, 0.1, 6);
        for params in [
            Hyperparams::Knn { k: 5 },
            Hyperparams::Gnb { variance_smoothing: 1e-9 },
            Hyperparams::Tree { max_depth: Some(3), min_samples_leaf: 2 },
            Hyperparams::Forest { n_trees: 5, max_depth: None, max_features: None, bootstrap: true },
        ] {
            let model = fit_classifier(&params, &data, 0).unwrap();
            for x in [[0.0, 0.0], [3.0, -1.0], [-10.0, 7.0]] {
                let p = model.predict_proba(&x).unwrap();
                assert!((p.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-9);
                assert!(p.as_slice().iter().all(|&v| v >= 0.0));
            }
            assert!(matches!(model.predict_proba(&[0.0]).unwrap_err(), Error::DimensionMismatch { .. }));
        }
    }

    #[test]
    fn knn_probabilities_are_multiples_of_one_over_k() {
        let data = blobs(80, 0.5, 0.1, 7);
        let model = fit_classifier(&Hyperparams::Knn { k: 7 }, &data, 0).unwrap();
        for x in data.features.iter().take(20) {
            for &p in model.predict_proba(x).unwrap().as_slice() {
                let votes = p * 7.0;
                assert!((votes - votes.round()).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn grid_search_prefers_smoothing_k_under_label_noise() {
        let data = blobs(300, 1.0, 0.1, 8);
        let grid = [Hyperparams::Knn { k: 1 }, Hyperparams::Knn { k: 9 }];
        assert_eq!(grid_search(&grid, &data, 0).unwrap(), Hyperparams::Knn { k: 9 });
        assert_eq!(grid_search(&grid, &data, 0).unwrap(), grid_search(&grid, &data, 0).unwrap());
    }

    #[test]
    fn grid_search_edge_cases() {
        let data = blobs(30, 1.0, 0.0, 9);
        assert!(grid_search(&[], &data, 0).is_err());
        let single = [Hyperparams::Knn { k: 3 }];
        assert_eq!(grid_search(&single, &data, 0).unwrap(), single[0]);
    }

    #[test]
    fn grid_search_ignores_duplicated_losers() {
        let data = blobs(300, 1.0, 0.1, 10);
        let grid = vec![Hyperparams::Knn { k: 1 }, Hyperparams::Knn { k: 9 }, Hyperparams::Knn { k: 3 }];
        let winner = grid_search(&grid, &data, 4).unwrap();
        let loser = *grid.iter().find(|&&p| p != winner).unwrap();
        let mut dup = grid.clone();
        dup.push(loser);
        dup.insert(0, loser);
        assert_eq!(grid_search(&dup, &data, 4).unwrap(), winner);
    }

    #[test]
    fn model_json_roundtrip() {
        let data = blobs(40, 1.0, 0.0, 11);
        let model = fit_classifier(&Hyperparams::Tree { max_depth: Some(2), min_samples_leaf: 1 }, &data, 0).unwrap();
        let back: Model = serde_json::from_str(&serde_json::to_string(&model).unwrap()).unwrap();
        assert_eq!(back, model);
    }
}

use serde::{Deserialize, Serialize};

use super::{check_dim, Classifier, ProbVector};
use crate::error::{Error, Result};

/// Brute-force k-nearest-neighbors classifier. Probabilities are raw vote
/// fractions over the `k` closest training rows in Euclidean distance, ties in
/// distance going to the lower training index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Knn {
    pub k: usize,
    pub points: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub n_classes: usize,
}

impl Knn {
    pub fn fit(k: usize, points: Vec<Vec<f64>>, labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        if k == 0 || k % 2 == 0 {
            return Err(Error::InvalidParameter(format!("kNN k must be odd and positive, got {k}")));
        }
        if k > points.len() {
            return Err(Error::InvalidParameter(format!(
                "kNN k = {k} exceeds the {} training samples",
                points.len()
            )));
        }
        Ok(Knn {
            k,
            points,
            labels,
            n_classes,
        })
    }

    /// Indices of the `k` nearest training rows, nearest first.
    pub fn neighbors(&self, x: &[f64]) -> Vec<usize> {
        let mut dist: Vec<(f64, usize)> = self
            .points
            .iter()
            .enumerate()
            .map(|(i, p)| (p.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum(), i))
            .collect();
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if self.k < dist.len() {
            dist.select_nth_unstable_by(self.k - 1, cmp);
            dist.truncate(self.k);
        }
        dist.sort_by(cmp);
        dist.into_iter().map(|(_, i)| i).collect()
    }
}

impl Classifier for Knn {
    fn n_classes(&self) -> usize {
        self.n_classes
    }

    fn n_features(&self) -> usize {
        self.points[0].len()
    }

    fn predict_proba(&self, x: &[f64]) -> Result<ProbVector> {
        check_dim(self.n_features(), x)?;
        let mut votes = vec![0.0; self.n_classes];
        for i in self.neighbors(x) {
            votes[self.labels[i]] += 1.0;
        }
        Ok(ProbVector::from_weights(votes))
    }
}

use serde::{Deserialize, Serialize};

use super::{check_dim, Classifier, ProbVector};
use crate::data::Dataset;
use crate::error::{Error, Result};

/// Gaussian naive Bayes. `variance_smoothing` is added to every per-class
/// variance, so no variance is ever zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianNb {
    pub means: Vec<Vec<f64>>,
    pub variances: Vec<Vec<f64>>,
    pub log_priors: Vec<f64>,
    pub variance_smoothing: f64,
}

impl GaussianNb {
    pub fn fit(train: &Dataset, variance_smoothing: f64) -> Result<Self> {
        if !(variance_smoothing > 0.0) {
            return Err(Error::InvalidParameter(
                "variance_smoothing must be positive".into(),
            ));
        }
        let (c, d) = (train.class_count, train.n_features());
        let counts = train.class_counts();
        let mut means = vec![vec![0.0; d]; c];
        for (row, &y) in train.features.iter().zip(&train.labels) {
            for (m, v) in means[y].iter_mut().zip(row) {
                *m += v;
            }
        }
        for (m, &n) in means.iter_mut().zip(&counts) {
            m.iter_mut().for_each(|v| *v /= n as f64);
        }
        let mut variances = vec![vec![0.0; d]; c];
        for (row, &y) in train.features.iter().zip(&train.labels) {
            for ((s, v), m) in variances[y].iter_mut().zip(row).zip(&means[y]) {
                *s += (v - m) * (v - m);
            }
        }
        for (s, &n) in variances.iter_mut().zip(&counts) {
            s.iter_mut()
                .for_each(|v| *v = *v / n as f64 + variance_smoothing);
        }
        let n = train.n_samples() as f64;
        let log_priors = counts.iter().map(|&k| (k as f64 / n).ln()).collect();
        Ok(GaussianNb {
            means,
            variances,
            log_priors,
            variance_smoothing,
        })
    }

    fn joint_log_likelihood(&self, x: &[f64]) -> Vec<f64> {
        self.means
            .iter()
            .zip(&self.variances)
            .zip(&self.log_priors)
            .map(|((mu, var), prior)| {
                prior
                    + x.iter()
                        .zip(mu.iter().zip(var))
                        .map(|(v, (m, s))| -0.5 * ((2.0 * std::f64::consts::PI * s).ln() + (v - m) * (v - m) / s))
                        .sum::<f64>()
            })
            .collect()
    }
}

impl Classifier for GaussianNb {
    fn n_classes(&self) -> usize {
        self.means.len()
    }

    fn n_features(&self) -> usize {
        self.means[0].len()
    }

    fn predict_proba(&self, x: &[f64]) -> Result<ProbVector> {
        check_dim(self.n_features(), x)?;
        let jll = self.joint_log_likelihood(x);
        let max = jll.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        Ok(ProbVector::from_weights(jll.iter().map(|v| (v - max).exp()).collect()))
    }
}

//! Inductive conformal prediction and the credibility-based reject option.
//!
//! Calibration stores the non-conformity score of every held-out sample. For
//! a query point, each candidate label gets a p-value equal to the share of
//! calibration scores at least as large as the query's score under that label,
//! divided by `m + 1` (the query itself is not counted). The largest p-value
//! is the credibility, and a sample is rejected when its credibility is below
//! the threshold.

mod arc;

pub use arc::{accuracy_reject_curve, knee_threshold, kneedle_index, ArCurve, ArcPoint, Knee};

use serde::{Deserialize, Serialize};

use crate::classifiers::{Classifier, Model};
use crate::data::Dataset;
use crate::error::{Error, Result};

/// Largest probability among the other classes minus the probability of
/// `label`. Ranges over `[-1, 1]`.
pub fn nonconformity(probs: &[f64], label: usize) -> Result<f64> {
    if probs.len() < 2 {
        return Err(Error::InvalidParameter(
            "non-conformity needs at least two classes".into(),
        ));
    }
    if label >= probs.len() {
        return Err(Error::InvalidParameter(format!(
            "label {label} out of range for {} classes",
            probs.len()
        )));
    }
    let other = probs
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != label)
        .map(|(_, &p)| p)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(other - probs[label])
}

/// Anything that can score how certain a prediction at `x` is. A sample is
/// rejected when its score falls below the threshold.
pub trait RejectOption: Send + Sync {
    fn n_features(&self) -> usize;

    fn reject_score(&self, x: &[f64]) -> Result<f64>;

    fn is_rejected(&self, x: &[f64], threshold: f64) -> Result<bool> {
        Ok(self.reject_score(x)? < threshold)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Class(usize),
    Reject,
}

impl Label {
    pub fn is_reject(self) -> bool {
        self == Label::Reject
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentedPrediction {
    pub label: Label,
    /// Label with the largest p-value, whether or not the sample was rejected.
    pub best_class: usize,
    pub p_values: Vec<f64>,
    pub confidence: f64,
    pub credibility: f64,
    pub reject_score: f64,
    pub threshold: f64,
}

impl AugmentedPrediction {
    /// Apply the argmax prediction and the credibility reject rule to a
    /// vector of p-values.
    pub fn from_p_values(p_values: Vec<f64>, threshold: f64) -> Result<Self> {
        if !(threshold >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "reject threshold must be nonnegative, got {threshold}"
            )));
        }
        if p_values.is_empty() {
            return Err(Error::Empty("p-value vector"));
        }
        let best_class = crate::classifiers::argmax(&p_values);
        let credibility = p_values[best_class];
        let runner_up = p_values
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != best_class)
            .map(|(_, &p)| p)
            .fold(0.0, f64::max);
        let label = if credibility < threshold {
            Label::Reject
        } else {
            Label::Class(best_class)
        };
        Ok(AugmentedPrediction {
            label,
            best_class,
            p_values,
            confidence: 1.0 - runner_up,
            credibility,
            reject_score: credibility,
            threshold,
        })
    }
}

/// A calibrated conformal predictor wrapping any probabilistic classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConformalPredictor<M = Model> {
    model: M,
    /// Calibration non-conformity scores, ascending.
    scores: Vec<f64>,
}

impl<M: Classifier> ConformalPredictor<M> {
    /// Score every calibration sample under its true label. The calibration
    /// data must not have been used to fit `model`.
    pub fn calibrate(model: M, calib: &Dataset) -> Result<Self> {
        if calib.n_samples() == 0 {
            return Err(Error::Empty("calibration set"));
        }
        let scores = calib
            .features
            .iter()
            .zip(&calib.labels)
            .map(|(x, &y)| nonconformity(model.predict_proba(x)?.as_slice(), y))
            .collect::<Result<Vec<_>>>()?;
        Self::from_scores(model, scores)
    }

    /// Build a predictor from precomputed calibration scores.
    pub fn from_scores(model: M, mut scores: Vec<f64>) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::Empty("calibration set"));
        }
        if scores.iter().any(|s| s.is_nan()) {
            return Err(Error::InvalidParameter("NaN calibration score".into()));
        }
        scores.sort_by(f64::total_cmp);
        Ok(ConformalPredictor { model, scores })
    }

    pub fn model(&self) -> &M {
        &self.model
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn n_classes(&self) -> usize {
        self.model.n_classes()
    }

    /// Share of calibration scores `>= alpha`, over `m + 1`.
    pub fn p_value_of_score(&self, alpha: f64) -> f64 {
        let below = self.scores.partition_point(|&s| s < alpha);
        (self.scores.len() - below) as f64 / (self.scores.len() + 1) as f64
    }

    pub fn p_values(&self, x: &[f64]) -> Result<Vec<f64>> {
        let probs = self.model.predict_proba(x)?;
        (0..probs.len())
            .map(|label| Ok(self.p_value_of_score(nonconformity(probs.as_slice(), label)?)))
            .collect()
    }

    pub fn credibility(&self, x: &[f64]) -> Result<f64> {
        Ok(self.p_values(x)?.into_iter().fold(0.0, f64::max))
    }

    pub fn predict_with_reject(&self, x: &[f64], threshold: f64) -> Result<AugmentedPrediction> {
        AugmentedPrediction::from_p_values(self.p_values(x)?, threshold)
    }
}

impl<M: Classifier> RejectOption for ConformalPredictor<M> {
    fn n_features(&self) -> usize {
        self.model.n_features()
    }

    fn reject_score(&self, x: &[f64]) -> Result<f64> {
        self.credibility(x)
    }
}

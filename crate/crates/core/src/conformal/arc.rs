//! Accuracy-reject curves and Kneedle threshold selection.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::ConformalPredictor;
use crate::classifiers::Classifier;
use crate::data::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArcPoint {
    pub theta: f64,
    pub rejection_rate: f64,
    /// `None` when every sample is rejected.
    pub accepted_accuracy: Option<f64>,
}

impl ArcPoint {
    /// Evaluate a single threshold directly.
    pub fn at(credibilities: &[f64], correct: &[bool], theta: f64) -> Self {
        let n = credibilities.len();
        let accepted: Vec<bool> = credibilities
            .iter()
            .zip(correct)
            .filter(|&(&c, _)| c >= theta)
            .map(|(_, &ok)| ok)
            .collect();
        ArcPoint {
            theta,
            rejection_rate: (n - accepted.len()) as f64 / n as f64,
            accepted_accuracy: (!accepted.is_empty())
                .then(|| accepted.iter().filter(|&&ok| ok).count() as f64 / accepted.len() as f64),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArCurve {
    /// Ordered by strictly increasing threshold.
    pub points: Vec<ArcPoint>,
}

impl ArCurve {
    /// Curve over thresholds {0, 1} plus every distinct credibility, given
    /// per-sample credibilities and whether the argmax label was correct.
    pub fn from_scores(credibilities: &[f64], correct: &[bool]) -> Result<Self> {
        if credibilities.is_empty() {
            return Err(Error::Empty("accuracy-reject evaluation set"));
        }
        if credibilities.len() != correct.len() {
            return Err(Error::DimensionMismatch {
                expected: credibilities.len(),
                found: correct.len(),
            });
        }
        let n = credibilities.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| credibilities[a].total_cmp(&credibilities[b]));

        let mut thetas: Vec<f64> = credibilities.to_vec();
        thetas.push(0.0);
        thetas.push(1.0);
        thetas.sort_by(f64::total_cmp);
        thetas.dedup();

        let total_correct = correct.iter().filter(|&&c| c).count();
        let mut rejected = 0;
        let mut rejected_correct = 0;
        let mut points = Vec::with_capacity(thetas.len());
        for theta in thetas {
            while rejected < n && credibilities[order[rejected]] < theta {
                if correct[order[rejected]] {
                    rejected_correct += 1;
                }
                rejected += 1;
            }
            let accepted = n - rejected;
            points.push(ArcPoint {
                theta,
                rejection_rate: rejected as f64 / n as f64,
                accepted_accuracy: (accepted > 0)
                    .then(|| (total_correct - rejected_correct) as f64 / accepted as f64),
            });
        }
        Ok(ArCurve { points })
    }

    /// CSV with columns `theta,rejection_rate,accepted_accuracy`; undefined
    /// accuracies are written as empty fields.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut writer = csv::Writer::from_writer(out);
        writer.write_record(["theta", "rejection_rate", "accepted_accuracy"])?;
        for p in &self.points {
            writer.write_record([
                p.theta.to_string(),
                p.rejection_rate.to_string(),
                p.accepted_accuracy.map_or_else(String::new, |a| a.to_string()),
            ])?;
        }
        writer.flush().map_err(|e| Error::io("<arc csv>", e))?;
        Ok(())
    }
}

/// Accuracy-reject curve of the conformal predictor on a labeled set.
pub fn accuracy_reject_curve<M: Classifier>(
    cp: &ConformalPredictor<M>,
    eval_set: &Dataset,
) -> Result<ArCurve> {
    if eval_set.n_samples() == 0 {
        return Err(Error::Empty("accuracy-reject evaluation set"));
    }
    let mut credibilities = Vec::with_capacity(eval_set.n_samples());
    let mut correct = Vec::with_capacity(eval_set.n_samples());
    for (x, &y) in eval_set.features.iter().zip(&eval_set.labels) {
        let pred = cp.predict_with_reject(x, 0.0)?;
        credibilities.push(pred.credibility);
        correct.push(pred.best_class == y);
    }
    ArCurve::from_scores(&credibilities, &correct)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Knee {
    pub theta: f64,
    /// Index into the curve's points.
    pub index: usize,
    /// Set when no knee passed the sensitivity test and the median candidate
    /// threshold was returned instead.
    pub fallback: bool,
}

/// Kneedle on points sorted by `xs`. Returns the index of the detected knee,
/// or `None` when the curve has no knee (too short, flat or linear).
///
/// Both axes are min-max normalized. A decreasing curve is mirrored to an
/// increasing one; the difference series is `y - x` for concave curves and
/// `x - y` for convex ones, the orientation coming from the sign of the mean
/// discrete curvature. A local maximum of the difference series counts as a
/// knee when the series falls below `d_max - sensitivity * mean(dx)` before the
/// next local maximum. The knee with the largest difference value wins.
pub fn kneedle_index(xs: &[f64], ys: &[f64], sensitivity: f64) -> Option<usize> {
    let n = xs.len();
    if n < 3 || ys.len() != n {
        return None;
    }
    let normalize = |v: &[f64]| -> Option<Vec<f64>> {
        let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        (hi - lo > 0.0).then(|| v.iter().map(|x| (x - lo) / (hi - lo)).collect())
    };
    let x = normalize(xs)?;
    let mut y = normalize(ys)?;
    if y[n - 1] < y[0] {
        y.iter_mut().for_each(|v| *v = 1.0 - *v);
    }

    let mut curvature = 0.0;
    for i in 1..n - 1 {
        let (dx0, dx1) = (x[i] - x[i - 1], x[i + 1] - x[i]);
        if dx0 > 0.0 && dx1 > 0.0 {
            curvature += (y[i + 1] - y[i]) / dx1 - (y[i] - y[i - 1]) / dx0;
        }
    }
    let diff: Vec<f64> = if curvature > 0.0 {
        x.iter().zip(&y).map(|(a, b)| a - b).collect()
    } else {
        x.iter().zip(&y).map(|(a, b)| b - a).collect()
    };

    let lo = diff.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = diff.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo <= 1e-9 {
        return None;
    }

    let step = (x[n - 1] - x[0]) / (n - 1) as f64;
    let maxima: Vec<usize> = (1..n - 1)
        .filter(|&i| diff[i] > diff[i - 1] && diff[i] >= diff[i + 1])
        .collect();
    let mut best: Option<usize> = None;
    for (m, &i) in maxima.iter().enumerate() {
        let threshold = diff[i] - sensitivity * step;
        let next = maxima.get(m + 1).copied().unwrap_or(n);
        let is_knee = (i + 1..next).any(|j| diff[j] < threshold);
        if is_knee && best.is_none_or(|b| diff[i] > diff[b]) {
            best = Some(i);
        }
    }
    best
}

/// Knee of the accuracy-reject curve as a credibility threshold. Points with
/// undefined accuracy are ignored.
pub fn knee_threshold(curve: &ArCurve, sensitivity: f64) -> Result<Knee> {
    if curve.points.len() < 3 {
        return Err(Error::InvalidParameter(format!(
            "knee detection needs at least 3 curve points, got {}",
            curve.points.len()
        )));
    }
    let defined: Vec<usize> = (0..curve.points.len())
        .filter(|&i| curve.points[i].accepted_accuracy.is_some())
        .collect();
    let xs: Vec<f64> = defined.iter().map(|&i| curve.points[i].rejection_rate).collect();
    let ys: Vec<f64> = defined
        .iter()
        .map(|&i| curve.points[i].accepted_accuracy.unwrap_or(0.0))
        .collect();
    match kneedle_index(&xs, &ys, sensitivity) {
        Some(k) => Ok(Knee {
            theta: curve.points[defined[k]].theta,
            index: defined[k],
            fallback: false,
        }),
        None => {
            let index = curve.points.len() / 2;
            Ok(Knee {
                theta: curve.points[index].theta,
                index,
                fallback: true,
            })
        }
    }
}

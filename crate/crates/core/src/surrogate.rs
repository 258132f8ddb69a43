//! Local explanations of reject.
//!
//! Around a rejected sample we draw Gaussian neighbors, label each one by
//! whether the reject option fires there, and fit a shallow CART tree to the
//! resulting reject/accept problem. The tree is the local surrogate of the
//! reject option; it is explained either by its Gini importances or by its
//! closest counterfactual toward "accepted".

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::classifiers::{DecisionTree, TreeParams};
use crate::conformal::RejectOption;
use crate::counterfactual::{closest_counterfactual, sparsity, CfConfig};
use crate::error::{Error, Result};
use crate::seed;

/// Surrogate label of a sample the reject option accepts.
pub const ACCEPTED: usize = 0;
/// Surrogate label of a sample the reject option rejects.
pub const REJECTED: usize = 1;

/// The local surrogate is a CART tree over the binary reject labels.
pub type SurrogateTree = DecisionTree;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NeighborhoodConfig {
    pub n_samples: usize,
    /// Per-dimension standard deviation, in standardized units.
    pub sigma: f64,
    /// Resampling attempts with doubled sigma when every neighbor gets the
    /// same label.
    pub max_retries: usize,
}

impl Default for NeighborhoodConfig {
    fn default() -> Self {
        NeighborhoodConfig {
            n_samples: 500,
            sigma: 0.5,
            max_retries: 3,
        }
    }
}

impl NeighborhoodConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples < 10 {
            return Err(Error::InvalidParameter(format!(
                "neighborhood needs at least 10 samples, got {}",
                self.n_samples
            )));
        }
        if !(self.sigma > 0.0) {
            return Err(Error::InvalidParameter("neighborhood sigma must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SurrogateConfig {
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    /// Share of the local data held out to measure surrogate fidelity.
    pub fidelity_holdout: f64,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        SurrogateConfig {
            max_depth: 3,
            min_samples_leaf: 10,
            fidelity_holdout: 0.2,
        }
    }
}

/// Everything an explanation run needs besides the reject option itself.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExplainConfig {
    pub neighborhood: NeighborhoodConfig,
    pub surrogate: SurrogateConfig,
    pub cf: CfConfig,
}

/// Labeled neighborhood of a rejected sample. The explained point is the
/// last entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalDataset {
    pub points: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub sigma: f64,
    pub retries: usize,
}

impl LocalDataset {
    pub fn x_orig(&self) -> &[f64] {
        self.points.last().expect("local dataset contains the explained point")
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExplanationMode {
    FeatImp,
    Cf,
}

impl std::str::FromStr for ExplanationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "featimp" | "fri" => Ok(ExplanationMode::FeatImp),
            "cf" | "counterfactual" => Ok(ExplanationMode::Cf),
            other => Err(Error::InvalidParameter(format!("unknown explanation mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub mode: ExplanationMode,
    /// Gini importances of the surrogate (feature-importance mode).
    pub fri: Option<Vec<f64>>,
    /// Closest accepted point under the surrogate (counterfactual mode).
    pub x_cf: Option<Vec<f64>>,
    pub sparsity: usize,
    /// Whether the surrogate itself rejects the explained point.
    pub surrogate_consistent: bool,
    pub sigma: f64,
    pub retries: usize,
    /// Surrogate accuracy on held-out local samples.
    pub fidelity: Option<f64>,
    /// True reject score at `x_cf`. Not guaranteed to clear the threshold.
    pub reject_score_at_cf: Option<f64>,
}

impl Explanation {
    /// Features the explanation points at: positive importances in
    /// feature-importance mode, coordinates moved by more than `tolerance` in
    /// counterfactual mode. `x_orig` is only needed for the latter.
    pub fn features(&self, x_orig: &[f64], tolerance: f64) -> Vec<usize> {
        match (self.mode, &self.fri, &self.x_cf) {
            (ExplanationMode::FeatImp, Some(fri), _) => {
                (0..fri.len()).filter(|&j| fri[j] > 0.0).collect()
            }
            (ExplanationMode::Cf, _, Some(x_cf)) => (0..x_cf.len())
                .filter(|&j| (x_cf[j] - x_orig[j]).abs() > tolerance)
                .collect(),
            _ => Vec::new(),
        }
    }
}

/// `n_samples` i.i.d. draws from an isotropic Gaussian centered at `x_orig`.
pub fn sample_neighborhood(x_orig: &[f64], cfg: &NeighborhoodConfig, seed: u64) -> Result<Vec<Vec<f64>>> {
    cfg.validate()?;
    let normal = Normal::new(0.0, cfg.sigma)
        .map_err(|e| Error::InvalidParameter(format!("neighborhood sigma: {e}")))?;
    let mut rng = seed::rng(seed);
    Ok((0..cfg.n_samples)
        .map(|_| x_orig.iter().map(|&c| c + normal.sample(&mut rng)).collect())
        .collect())
}

/// Sample and label the neighborhood of a rejected point. When no neighbor
/// is accepted, sigma doubles and sampling repeats up to `max_retries` times.
pub fn build_local_dataset<R: RejectOption + ?Sized>(
    reject: &R,
    threshold: f64,
    x_orig: &[f64],
    cfg: &NeighborhoodConfig,
    seed: u64,
) -> Result<LocalDataset> {
    cfg.validate()?;
    if x_orig.len() != reject.n_features() {
        return Err(Error::DimensionMismatch {
            expected: reject.n_features(),
            found: x_orig.len(),
        });
    }
    let score = reject.reject_score(x_orig)?;
    if score >= threshold {
        return Err(Error::NotRejected { score, threshold });
    }

    let mut sigma = cfg.sigma;
    for attempt in 0..=cfg.max_retries {
        let attempt_cfg = NeighborhoodConfig { sigma, ..*cfg };
        let mut points = sample_neighborhood(x_orig, &attempt_cfg, seed::derive(seed, &[attempt as u64]))?;
        let mut labels = points
            .iter()
            .map(|x| Ok(if reject.is_rejected(x, threshold)? { REJECTED } else { ACCEPTED }))
            .collect::<Result<Vec<_>>>()?;
        if labels.contains(&ACCEPTED) {
            points.push(x_orig.to_vec());
            labels.push(REJECTED);
            return Ok(LocalDataset {
                points,
                labels,
                sigma,
                retries: attempt,
            });
        }
        sigma *= 2.0;
    }
    Err(Error::LocallyConstant {
        retries: cfg.max_retries,
    })
}

/// CART surrogate over the binary reject labels.
pub fn fit_surrogate(
    local: &LocalDataset,
    max_depth: usize,
    min_samples_leaf: usize,
    seed: u64,
) -> Result<SurrogateTree> {
    if !(local.labels.contains(&ACCEPTED) && local.labels.contains(&REJECTED)) {
        return Err(Error::InvalidParameter(
            "surrogate training data must contain both accepted and rejected samples".into(),
        ));
    }
    let params = TreeParams {
        max_depth: Some(max_depth),
        min_samples_leaf,
        max_features: None,
    };
    DecisionTree::fit(&local.points, &local.labels, 2, params, seed)
}

/// Normalized Gini importances of the surrogate; all zero for a single leaf.
pub fn gini_importance(tree: &SurrogateTree) -> Vec<f64> {
    tree.feature_importances()
}

/// A fitted local surrogate from which both explanation modes can be read.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalSurrogate {
    pub local: LocalDataset,
    pub tree: SurrogateTree,
    pub fidelity: Option<f64>,
}

impl LocalSurrogate {
    pub fn fit<R: RejectOption + ?Sized>(
        reject: &R,
        threshold: f64,
        x_orig: &[f64],
        cfg: &ExplainConfig,
        seed: u64,
    ) -> Result<Self> {
        let local = build_local_dataset(reject, threshold, x_orig, &cfg.neighborhood, seed::derive(seed, &[0]))?;
        let sc = &cfg.surrogate;
        let tree = fit_surrogate(&local, sc.max_depth, sc.min_samples_leaf, seed::derive(seed, &[1]))?;
        let fidelity = holdout_fidelity(&local, sc, seed::derive(seed, &[2]))?;
        Ok(LocalSurrogate { local, tree, fidelity })
    }

    pub fn consistent(&self) -> bool {
        self.tree.leaf(self.local.x_orig()).class() == REJECTED
    }

    fn base(&self, mode: ExplanationMode) -> Explanation {
        Explanation {
            mode,
            fri: None,
            x_cf: None,
            sparsity: 0,
            surrogate_consistent: self.consistent(),
            sigma: self.local.sigma,
            retries: self.local.retries,
            fidelity: self.fidelity,
            reject_score_at_cf: None,
        }
    }

    pub fn feature_importance(&self) -> Explanation {
        let fri = gini_importance(&self.tree);
        Explanation {
            sparsity: fri.iter().filter(|&&v| v > 0.0).count(),
            fri: Some(fri),
            ..self.base(ExplanationMode::FeatImp)
        }
    }

    pub fn counterfactual<R: RejectOption + ?Sized>(&self, reject: &R, cf: &CfConfig) -> Result<Explanation> {
        let x_orig = self.local.x_orig();
        let found = closest_counterfactual(&self.tree, x_orig, ACCEPTED, cf)?;
        Ok(Explanation {
            sparsity: sparsity(&found.point, x_orig, cf.tolerance)?,
            reject_score_at_cf: Some(reject.reject_score(&found.point)?),
            x_cf: Some(found.point),
            ..self.base(ExplanationMode::Cf)
        })
    }
}

/// Accuracy on a held-out share of the local data of a surrogate fit on the
/// remainder. The explained point always stays in the fitting part.
fn holdout_fidelity(local: &LocalDataset, sc: &SurrogateConfig, seed: u64) -> Result<Option<f64>> {
    if !(sc.fidelity_holdout > 0.0 && sc.fidelity_holdout < 1.0) {
        return Ok(None);
    }
    let n_neighbors = local.len() - 1;
    let mut order: Vec<usize> = (0..n_neighbors).collect();
    order.shuffle(&mut seed::rng(seed));
    let n_hold = ((n_neighbors as f64) * sc.fidelity_holdout).round() as usize;
    let (hold, fit) = order.split_at(n_hold);
    let mut fit_idx = fit.to_vec();
    fit_idx.push(n_neighbors);
    let fit_part = LocalDataset {
        points: fit_idx.iter().map(|&i| local.points[i].clone()).collect(),
        labels: fit_idx.iter().map(|&i| local.labels[i]).collect(),
        ..local.clone()
    };
    if hold.is_empty() || !fit_part.labels.contains(&ACCEPTED) {
        return Ok(None);
    }
    let tree = fit_surrogate(&fit_part, sc.max_depth, sc.min_samples_leaf, seed)?;
    let correct = hold
        .iter()
        .filter(|&&i| tree.leaf(&local.points[i]).class() == local.labels[i])
        .count();
    Ok(Some(correct as f64 / hold.len() as f64))
}

/// Explain why `x_orig` is rejected, in the requested mode.
pub fn explain_reject<R: RejectOption + ?Sized>(
    reject: &R,
    threshold: f64,
    x_orig: &[f64],
    mode: ExplanationMode,
    cfg: &ExplainConfig,
    seed: u64,
) -> Result<Explanation> {
    let surrogate = LocalSurrogate::fit(reject, threshold, x_orig, cfg, seed)?;
    match mode {
        ExplanationMode::FeatImp => Ok(surrogate.feature_importance()),
        ExplanationMode::Cf => surrogate.counterfactual(reject, &cfg.cf),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifiers::{Classifier, ProbVector};
    use crate::conformal::ConformalPredictor;

    /// Confident for x0 > 0, undecided otherwise.
    struct SignModel(usize);

    impl Classifier for SignModel {
        fn n_classes(&self) -> usize {
            2
        }
        fn n_features(&self) -> usize {
            self.0
        }
        fn predict_proba(&self, x: &[f64]) -> Result<ProbVector> {
            ProbVector::new(if x[0] > 0.0 { vec![1.0, 0.0] } else { vec![0.5, 0.5] })
        }
    }

    /// Credibility is 0.9 where x0 > 0 and 0 elsewhere.
    fn sign_predictor(d: usize) -> ConformalPredictor<SignModel> {
        ConformalPredictor::from_scores(SignModel(d), vec![-1.0; 9]).unwrap()
    }

    fn wide() -> NeighborhoodConfig {
        NeighborhoodConfig { sigma: 1.0, ..Default::default() }
    }

    #[test]
    fn hand_built_credibility() {
        let cp = sign_predictor(2);
        assert!((cp.credibility(&[0.5, 0.0]).unwrap() - 0.9).abs() < 1e-12);
        assert_eq!(cp.credibility(&[-0.5, 0.0]).unwrap(), 0.0);
    }

    #[test]
    fn tiny_sigma_stays_put() {
        let cfg = NeighborhoodConfig { sigma: 1e-12, ..Default::default() };
        let x = [0.3, -1.2, 4.0];
        for p in sample_neighborhood(&x, &cfg, 1).unwrap() {
            assert!(p.iter().zip(&x).all(|(a, b)| (a - b).abs() < 1e-9));
        }
    }

    #[test]
    fn neighborhood_moments() {
        let cfg = NeighborhoodConfig { n_samples: 10_000, sigma: 0.5, max_retries: 0 };
        let x = [1.0, -2.0];
        let pts = sample_neighborhood(&x, &cfg, 7).unwrap();
        for j in 0..2 {
            let mean = pts.iter().map(|p| p[j]).sum::<f64>() / 10_000.0;
            let sd = (pts.iter().map(|p| (p[j] - mean).powi(2)).sum::<f64>() / 10_000.0).sqrt();
            assert!((mean - x[j]).abs() < 0.02, "{mean}");
            assert!((sd - 0.5).abs() < 0.02, "{sd}");
        }
        assert_eq!(pts, sample_neighborhood(&x, &cfg, 7).unwrap());
    }

    #[test]
    fn labels_follow_the_reject_rule() {
        let cp = sign_predictor(3);
        let local = build_local_dataset(&cp, 0.5, &[-1.0, 0.0, 0.0], &wide(), 3).unwrap();
        assert_eq!(local.len(), 501);
        assert_eq!(local.x_orig(), &[-1.0, 0.0, 0.0]);
        for (p, &y) in local.points.iter().zip(&local.labels) {
            assert_eq!(y == REJECTED, p[0] <= 0.0);
        }
    }

    #[test]
    fn everything_rejected_exhausts_retries() {
        let cp = sign_predictor(2);
        let err = build_local_dataset(&cp, 0.95, &[1.0, 0.0], &wide(), 0).unwrap_err();
        assert!(matches!(err, Error::LocallyConstant { retries: 3 }));
    }

    #[test]
    fn accepted_point_is_refused() {
        let cp = sign_predictor(2);
        assert!(matches!(
            build_local_dataset(&cp, 0.5, &[1.0, 0.0], &wide(), 0).unwrap_err(),
            Error::NotRejected { .. }
        ));
    }

    #[test]
    fn single_class_surrogate_input_errors() {
        let local = LocalDataset {
            points: vec![vec![0.0]; 12],
            labels: vec![REJECTED; 12],
            sigma: 0.5,
            retries: 0,
        };
        assert!(fit_surrogate(&local, 3, 1, 0).is_err());
    }

    #[test]
    fn separable_local_data_gives_a_stump() {
        let mut points = Vec::new();
        let mut labels = Vec::new();
        for i in 0..40 {
            let x0 = if i % 2 == 0 { -0.2 - i as f64 * 0.01 } else { 0.3 + i as f64 * 0.01 };
            points.push(vec![x0, (i as f64 * 0.37).sin()]);
            labels.push(if x0 <= 0.0 { REJECTED } else { ACCEPTED });
        }
        let local = LocalDataset { points, labels, sigma: 0.5, retries: 0 };
        let tree = fit_surrogate(&local, 3, 1, 0).unwrap();
        assert_eq!(tree.depth(), 1);
        let s = tree.nodes[0].split.unwrap();
        assert_eq!(s.feature, 0);
        assert!(s.threshold > -0.2 && s.threshold < 0.31);
        assert_eq!(gini_importance(&tree), vec![1.0, 0.0]);
    }

    #[test]
    fn counterfactual_moves_only_the_signal_feature() {
        let cp = sign_predictor(4);
        let cfg = ExplainConfig { neighborhood: wide(), ..Default::default() };
        let x = [-1.0, 0.2, -0.3, 0.5];
        let e = explain_reject(&cp, 0.5, &x, ExplanationMode::Cf, &cfg, 5).unwrap();
        assert!(e.surrogate_consistent);
        assert_eq!(e.sparsity, 1);
        assert_eq!(e.features(&x, 1e-9), vec![0]);
        let x_cf = e.x_cf.unwrap();
        assert_eq!(&x_cf[1..], &x[1..]);

        let fi = explain_reject(&cp, 0.5, &x, ExplanationMode::FeatImp, &cfg, 5).unwrap();
        assert_eq!(fi.fri.as_deref(), Some(&[1.0, 0.0, 0.0, 0.0][..]));
        assert_eq!(fi.sparsity, 1);
        assert!(fi.fidelity.unwrap() > 0.95);
    }

    #[test]
    fn explanations_are_deterministic() {
        let cp = sign_predictor(3);
        let cfg = ExplainConfig { neighborhood: wide(), ..Default::default() };
        let x = [-0.4, 0.0, 1.0];
        for mode in [ExplanationMode::FeatImp, ExplanationMode::Cf] {
            assert_eq!(
                explain_reject(&cp, 0.5, &x, mode, &cfg, 9).unwrap(),
                explain_reject(&cp, 0.5, &x, mode, &cfg, 9).unwrap()
            );
        }
    }
}

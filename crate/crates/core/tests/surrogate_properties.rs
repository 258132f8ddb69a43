use std::collections::BTreeSet;

use rejex::classifiers::{accuracy, fit_classifier, Hyperparams};
use rejex::conformal::{ConformalPredictor, RejectOption};
use rejex::data::{make_synthetic, standardize, stratified_holdout, Dataset, SyntheticSpec};
use rejex::surrogate::{
    build_local_dataset, explain_reject, ExplainConfig, ExplanationMode, LocalSurrogate, ACCEPTED, REJECTED,
};

struct Fixture {
    predictor: ConformalPredictor,
    test: Dataset,
    threshold: f64,
}

fn fixture() -> Fixture {
    let mut spec = SyntheticSpec::flip_like(3);
    spec.n = 400;
    spec.separation = 1.0;
    let data = make_synthetic(&spec).unwrap();
    let (fit_idx, rest) = stratified_holdout(&data.labels, 0.5, 1);
    let rest_labels: Vec<usize> = rest.iter().map(|&i| data.labels[i]).collect();
    let (calib_pos, test_pos) = stratified_holdout(&rest_labels, 0.5, 2);
    let pick = |pos: &[usize]| -> Vec<usize> { pos.iter().map(|&p| rest[p]).collect() };
    let raw = [data.subset(&fit_idx), data.subset(&pick(&calib_pos)), data.subset(&pick(&test_pos))];
    let (_, scaled) = standardize(&raw[0], &[&raw[0], &raw[1], &raw[2]]).unwrap();
    let model = fit_classifier(&Hyperparams::Gnb { variance_smoothing: 1e-9 }, &scaled[0], 0).unwrap();
    let predictor = ConformalPredictor::calibrate(model, &scaled[1]).unwrap();
    Fixture {
        predictor,
        test: scaled[2].clone(),
        threshold: 0.2,
    }
}

fn rejected_rows(f: &Fixture) -> Vec<usize> {
    (0..f.test.n_samples())
        .filter(|&i| f.predictor.is_rejected(f.test.row(i), f.threshold).unwrap())
        .collect()
}

#[test]
fn local_labels_match_the_reject_option() {
    let f = fixture();
    let rows = rejected_rows(&f);
    assert!(!rows.is_empty());
    let cfg = ExplainConfig::default();
    for &i in rows.iter().take(5) {
        let local = build_local_dataset(&f.predictor, f.threshold, f.test.row(i), &cfg.neighborhood, i as u64).unwrap();
        assert_eq!(local.x_orig(), f.test.row(i));
        for (x, &y) in local.points.iter().zip(&local.labels) {
            let cred = f.predictor.credibility(x).unwrap();
            assert_eq!(y == REJECTED, cred < f.threshold);
        }
    }
}

#[test]
fn explanations_are_consistent_with_the_surrogate() {
    let f = fixture();
    let cfg = ExplainConfig::default();
    for &i in rejected_rows(&f).iter().take(10) {
        let x = f.test.row(i);
        let Ok(surrogate) = LocalSurrogate::fit(&f.predictor, f.threshold, x, &cfg, 7) else {
            continue;
        };
        let fi = surrogate.feature_importance();
        let used: BTreeSet<usize> = surrogate.tree.split_features().into_iter().collect();
        assert_eq!(fi.sparsity, used.len());
        assert_eq!(fi.features(x, 0.0), used.iter().copied().collect::<Vec<_>>());

        let cf = surrogate.counterfactual(&f.predictor, &cfg.cf).unwrap();
        let x_cf = cf.x_cf.as_ref().unwrap();
        assert_eq!(surrogate.tree.predict_class(x_cf).unwrap(), ACCEPTED);
    }
}

#[test]
fn explanations_are_deterministic() {
    let f = fixture();
    let cfg = ExplainConfig::default();
    let i = rejected_rows(&f)[0];
    for mode in [ExplanationMode::FeatImp, ExplanationMode::Cf] {
        let a = explain_reject(&f.predictor, f.threshold, f.test.row(i), mode, &cfg, 11);
        let b = explain_reject(&f.predictor, f.threshold, f.test.row(i), mode, &cfg, 11);
        assert_eq!(format!("{a:?}"), format!("{b:?}"));
    }
}

#[test]
fn synthetic_data_without_relevant_features_has_no_signal() {
    let spec = SyntheticSpec {
        n: 3000,
        d: 6,
        c: 2,
        class_weights: vec![0.7, 0.3],
        relevant_features: vec![],
        seed: 17,
        separation: 1.5,
    };
    let data = make_synthetic(&spec).unwrap();
    let (train_idx, test_idx) = stratified_holdout(&data.labels, 0.5, 3);
    let (train, test) = (data.subset(&train_idx), data.subset(&test_idx));
    let counts = test.class_counts();
    let majority = *counts.iter().max().unwrap() as f64 / test.n_samples() as f64;
    for params in [
        Hyperparams::Gnb { variance_smoothing: 1e-9 },
        Hyperparams::Knn { k: 9 },
        Hyperparams::Tree { max_depth: Some(5), min_samples_leaf: 5 },
    ] {
        let model = fit_classifier(&params, &train, 0).unwrap();
        let acc = accuracy(&model, &test).unwrap();
        assert!(acc <= majority + 0.05, "{params:?}: accuracy {acc} vs majority {majority}");
    }
}

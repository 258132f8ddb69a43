//! Cross-validated evaluation of reject explanations.
//!
//! Two protocols run over every (dataset, classifier) pair:
//!
//! * the algorithmic one explains every rejected test sample and reports how
//!   often the local surrogate agrees with the reject option together with
//!   the sparsity of both explanation modes;
//! * the ground-truth one adds noise to a random feature subset of the test
//!   samples and measures how many of the perturbed features the explanations
//!   of newly rejected samples recover.
//!
//! Each (dataset, classifier, fold) task draws its randomness from seeds
//! derived from the master seed, so results do not depend on the worker count.

mod config;
mod table;

pub use config::{DatasetSource, ExperimentConfig, PerturbationConfig, T21_DEFAULT_ROWS};
pub use table::{Cell, MetricSummary, Protocol, ResultTable};

use log::{info, warn};
use rand::seq::index;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifiers::{fit_classifier, grid_search, Classifier, ClassifierKind};
use crate::conformal::{accuracy_reject_curve, knee_threshold, ConformalPredictor, RejectOption};
use crate::data::{standardize, stratified_holdout, stratified_kfold, Dataset};
use crate::error::{Error, Result};
use crate::seed;
use crate::surrogate::LocalSurrogate;

// Stream identifiers mixed into derived seeds.
const FOLD_STREAM: u64 = 1;
const CALIB_STREAM: u64 = 2;
const GRID_STREAM: u64 = 3;
const FIT_STREAM: u64 = 4;
const SUBSET_STREAM: u64 = 5;
const NOISE_STREAM: u64 = 6;
const EXPLAIN_STREAM: u64 = 7;

/// `|explained ∩ perturbed| / |perturbed|`.
pub fn feature_recall(explained: &[usize], perturbed: &[usize]) -> Result<f64> {
    if perturbed.is_empty() {
        return Err(Error::Empty("perturbed feature set"));
    }
    let hits = perturbed.iter().filter(|j| explained.contains(j)).count();
    Ok(hits as f64 / perturbed.len() as f64)
}

/// Reject status of one test sample before and after perturbation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleStatus {
    /// Position in the fold's test set.
    pub index: usize,
    pub rejected_before: bool,
    pub rejected_after: bool,
    pub explained: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationRecord {
    pub dataset: String,
    pub classifier: String,
    pub fold: usize,
    /// Perturbed feature indices, sorted.
    pub features: Vec<usize>,
    /// Per-sample noise streams are derived from this seed and the sample index.
    pub noise_seed: u64,
    pub samples: Vec<SampleStatus>,
}

/// Standardized train/calibration/test split of one fold.
struct FoldData {
    train: Dataset,
    calib: Dataset,
    test: Dataset,
}

struct PreparedDataset {
    name: String,
    key: u64,
    folds: Vec<FoldData>,
}

fn prepare(cfg: &ExperimentConfig, source: &DatasetSource) -> Result<PreparedDataset> {
    let name = source.name().to_string();
    let key = seed::key(&name);
    let data = source.load()?;
    let assignment = stratified_kfold(&data.labels, cfg.k_folds, seed::derive(cfg.seed, &[key, FOLD_STREAM]))?;
    let mut folds = Vec::with_capacity(cfg.k_folds);
    for f in 0..cfg.k_folds {
        let train_idx = assignment.train_indices(f);
        let train_labels: Vec<usize> = train_idx.iter().map(|&i| data.labels[i]).collect();
        let (fit_pos, calib_pos) = stratified_holdout(
            &train_labels,
            cfg.calibration_fraction,
            seed::derive(cfg.seed, &[key, CALIB_STREAM, f as u64]),
        );
        let pick = |pos: &[usize]| -> Vec<usize> { pos.iter().map(|&p| train_idx[p]).collect() };
        let raw_train = data.subset(&pick(&fit_pos));
        let raw_calib = data.subset(&pick(&calib_pos));
        let raw_test = data.subset(assignment.test_indices(f));
        let (_, mut scaled) = standardize(&raw_train, &[&raw_train, &raw_calib, &raw_test])?;
        let test = scaled.pop().expect("three datasets");
        let calib = scaled.pop().expect("three datasets");
        let train = scaled.pop().expect("three datasets");
        folds.push(FoldData { train, calib, test });
    }
    Ok(PreparedDataset { name, key, folds })
}

/// Everything measured in one (dataset, classifier, fold) task.
#[derive(Default)]
struct FoldOutcome {
    threshold: f64,
    values: Vec<(&'static str, f64)>,
    n_explained: usize,
    n_failed: usize,
    record: Option<PerturbationRecord>,
}

impl FoldOutcome {
    fn push(&mut self, metric: &'static str, v: f64) {
        self.values.push((metric, v));
    }
}

struct Fitted {
    predictor: ConformalPredictor,
    threshold: f64,
}

fn fit_fold(cfg: &ExperimentConfig, kind: ClassifierKind, fold: &FoldData, task: &[u64]) -> Result<Fitted> {
    let grid = cfg.grid(kind);
    let mut path = task.to_vec();
    path.push(GRID_STREAM);
    let best = grid_search(&grid, &fold.train, seed::derive(cfg.seed, &path))?;
    *path.last_mut().expect("nonempty path") = FIT_STREAM;
    let model = fit_classifier(&best, &fold.train, seed::derive(cfg.seed, &path))?;
    let predictor = ConformalPredictor::calibrate(model, &fold.calib)?;
    let threshold = match cfg.threshold_override {
        Some(t) => t,
        None => {
            let curve = accuracy_reject_curve(&predictor, &fold.calib)?;
            knee_threshold(&curve, cfg.knee_sensitivity)?.theta
        }
    };
    Ok(Fitted { predictor, threshold })
}

fn explain_seed(cfg: &ExperimentConfig, task: &[u64], sample: usize) -> u64 {
    let mut path = task.to_vec();
    path.extend([EXPLAIN_STREAM, sample as u64]);
    seed::derive(cfg.seed, &path)
}

fn algorithmic_fold(
    cfg: &ExperimentConfig,
    kind: ClassifierKind,
    ds: &PreparedDataset,
    f: usize,
) -> Result<FoldOutcome> {
    let fold = &ds.folds[f];
    let task = [ds.key, seed::key(kind.display_name()), f as u64];
    let Fitted { predictor, threshold } = fit_fold(cfg, kind, fold, &task)?;
    let mut out = FoldOutcome {
        threshold,
        ..FoldOutcome::default()
    };
    for i in 0..fold.test.n_samples() {
        if out.n_explained + out.n_failed >= cfg.max_explained_per_fold {
            break;
        }
        let x = fold.test.row(i);
        if !predictor.is_rejected(x, threshold)? {
            continue;
        }
        let surrogate = match LocalSurrogate::fit(&predictor, threshold, x, &cfg.explain, explain_seed(cfg, &task, i)) {
            Ok(s) => s,
            Err(e) => {
                warn!("{} / {} fold {f} sample {i}: {e}", kind.display_name(), ds.name);
                out.n_failed += 1;
                continue;
            }
        };
        out.n_explained += 1;
        out.push("accuracy", if surrogate.consistent() { 1.0 } else { 0.0 });
        out.push("featimp_sparsity", surrogate.feature_importance().sparsity as f64);
        match surrogate.counterfactual(&predictor, &cfg.explain.cf) {
            Ok(cf) => out.push("cf_sparsity", cf.sparsity as f64),
            Err(e) => warn!("{} / {} fold {f} sample {i}: {e}", kind.display_name(), ds.name),
        }
        if let Some(fid) = surrogate.fidelity {
            out.push("local_fidelity", fid);
        }
    }
    Ok(out)
}

/// Perturbed feature subset of one (dataset, fold), shared by all classifiers.
fn perturbed_features(cfg: &ExperimentConfig, ds: &PreparedDataset, f: usize, d: usize) -> Vec<usize> {
    let size = ((cfg.perturbation.feature_fraction * d as f64).ceil() as usize).clamp(1, d);
    let mut rng = seed::rng(seed::derive(cfg.seed, &[ds.key, SUBSET_STREAM, f as u64]));
    let mut s = index::sample(&mut rng, d, size).into_vec();
    s.sort_unstable();
    s
}

fn perturb(x: &[f64], features: &[usize], sigma: f64, seed: u64) -> Vec<f64> {
    let mut z = x.to_vec();
    if sigma > 0.0 {
        let normal = Normal::new(0.0, sigma).expect("positive sigma");
        let mut rng = seed::rng(seed);
        for &j in features {
            z[j] += normal.sample(&mut rng);
        }
    }
    z
}

fn groundtruth_fold(
    cfg: &ExperimentConfig,
    kind: ClassifierKind,
    ds: &PreparedDataset,
    f: usize,
) -> Result<FoldOutcome> {
    let fold = &ds.folds[f];
    let task = [ds.key, seed::key(kind.display_name()), f as u64];
    let Fitted { predictor, threshold } = fit_fold(cfg, kind, fold, &task)?;
    let features = perturbed_features(cfg, ds, f, fold.test.n_features());
    let noise_seed = seed::derive(cfg.seed, &[ds.key, NOISE_STREAM, f as u64]);
    let tol = cfg.explain.cf.tolerance;

    let mut out = FoldOutcome {
        threshold,
        ..FoldOutcome::default()
    };
    let mut samples = Vec::with_capacity(fold.test.n_samples());
    let mut correct = 0usize;
    for i in 0..fold.test.n_samples() {
        let x = fold.test.row(i);
        let z = perturb(x, &features, cfg.perturbation.noise_sigma, seed::derive(noise_seed, &[i as u64]));
        if predictor.model().predict(&z)? == fold.test.labels[i] {
            correct += 1;
        }
        let mut status = SampleStatus {
            index: i,
            rejected_before: predictor.is_rejected(x, threshold)?,
            rejected_after: predictor.is_rejected(&z, threshold)?,
            explained: false,
        };
        let eligible = !status.rejected_before && status.rejected_after;
        if eligible && out.n_explained + out.n_failed < cfg.max_explained_per_fold {
            match LocalSurrogate::fit(&predictor, threshold, &z, &cfg.explain, explain_seed(cfg, &task, i)) {
                Ok(surrogate) => {
                    status.explained = true;
                    out.n_explained += 1;
                    out.push("accuracy", if surrogate.consistent() { 1.0 } else { 0.0 });
                    let fi = surrogate.feature_importance();
                    out.push("featimp_recall", feature_recall(&fi.features(&z, tol), &features)?);
                    match surrogate.counterfactual(&predictor, &cfg.explain.cf) {
                        Ok(cf) => out.push("cf_recall", feature_recall(&cf.features(&z, tol), &features)?),
                        Err(e) => warn!("{} / {} fold {f} sample {i}: {e}", kind.display_name(), ds.name),
                    }
                }
                Err(e) => {
                    warn!("{} / {} fold {f} sample {i}: {e}", kind.display_name(), ds.name);
                    out.n_failed += 1;
                }
            }
        }
        samples.push(status);
    }
    if fold.test.n_samples() > 0 {
        out.push("classifier_accuracy", correct as f64 / fold.test.n_samples() as f64);
    }
    out.record = Some(PerturbationRecord {
        dataset: ds.name.clone(),
        classifier: kind.display_name().to_string(),
        fold: f,
        features,
        noise_seed,
        samples,
    });
    Ok(out)
}

fn metric_names(protocol: Protocol) -> &'static [&'static str] {
    match protocol {
        Protocol::Algorithmic => &["accuracy", "featimp_sparsity", "cf_sparsity", "local_fidelity"],
        Protocol::GroundTruth => &["accuracy", "featimp_recall", "cf_recall", "classifier_accuracy"],
    }
}

type FoldFn = fn(&ExperimentConfig, ClassifierKind, &PreparedDataset, usize) -> Result<FoldOutcome>;

fn run(
    cfg: &ExperimentConfig,
    workers: usize,
    protocol: Protocol,
) -> Result<(ResultTable, Vec<PerturbationRecord>)> {
    cfg.validate()?;
    let fold_fn: FoldFn = match protocol {
        Protocol::Algorithmic => algorithmic_fold,
        Protocol::GroundTruth => groundtruth_fold,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidParameter(format!("cannot start worker pool: {e}")))?;

    pool.install(|| {
        let prepared = cfg
            .datasets
            .par_iter()
            .map(|src| prepare(cfg, src))
            .collect::<Result<Vec<_>>>()?;

        let tasks: Vec<(usize, ClassifierKind, usize)> = prepared
            .iter()
            .enumerate()
            .flat_map(|(d, _)| {
                cfg.classifiers
                    .iter()
                    .flat_map(move |&kind| (0..cfg.k_folds).map(move |f| (d, kind, f)))
            })
            .collect();
        let outcomes = tasks
            .par_iter()
            .map(|&(d, kind, f)| {
                info!("{protocol:?}: {} / {} fold {f}", kind.display_name(), prepared[d].name);
                fold_fn(cfg, kind, &prepared[d], f)
            })
            .collect::<Result<Vec<_>>>()?;

        let mut cells = Vec::new();
        let mut records = Vec::new();
        for (chunk_idx, chunk) in outcomes.chunks(cfg.k_folds).enumerate() {
            let (d, kind, _) = tasks[chunk_idx * cfg.k_folds];
            let metrics = metric_names(protocol)
                .iter()
                .map(|&name| {
                    let values: Vec<f64> = chunk
                        .iter()
                        .flat_map(|o| o.values.iter().filter(|(m, _)| *m == name).map(|(_, v)| *v))
                        .collect();
                    MetricSummary::from_values(name, &values)
                })
                .collect();
            let n_failed = chunk.iter().map(|o| o.n_failed).sum();
            if n_failed > 0 {
                warn!(
                    "{} / {}: {n_failed} samples could not be explained",
                    kind.display_name(),
                    prepared[d].name
                );
            }
            cells.push(Cell {
                classifier: kind.display_name().to_string(),
                dataset: prepared[d].name.clone(),
                metrics,
                n_explained: chunk.iter().map(|o| o.n_explained).sum(),
                n_failed,
                thresholds: chunk.iter().map(|o| o.threshold).collect(),
            });
            records.extend(chunk.iter().filter_map(|o| o.record.clone()));
        }
        // Classifier-major order, as in the published tables.
        let order: Vec<ClassifierKind> = cfg.classifiers.clone();
        cells.sort_by_key(|c| order.iter().position(|k| k.display_name() == c.classifier));
        Ok((ResultTable { protocol, cells }, records))
    })
}

/// Surrogate consistency and explanation sparsity for every configured cell.
pub fn run_algorithmic_experiment(cfg: &ExperimentConfig, workers: usize) -> Result<ResultTable> {
    run(cfg, workers, Protocol::Algorithmic).map(|(t, _)| t)
}

/// Recall of perturbed features for every configured cell.
pub fn run_groundtruth_experiment(cfg: &ExperimentConfig, workers: usize) -> Result<ResultTable> {
    run_groundtruth_with_records(cfg, workers).map(|(t, _)| t)
}

/// Like [`run_groundtruth_experiment`], also returning the per-fold
/// perturbation records in task order.
pub fn run_groundtruth_with_records(
    cfg: &ExperimentConfig,
    workers: usize,
) -> Result<(ResultTable, Vec<PerturbationRecord>)> {
    run(cfg, workers, Protocol::GroundTruth)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifiers::Hyperparams;
    use crate::data::SyntheticSpec;

    #[test]
    fn recall_examples() {
        assert!((feature_recall(&[1, 3], &[1, 2, 3]).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(feature_recall(&[0, 1, 2, 3], &[1, 2]).unwrap(), 1.0);
        assert_eq!(feature_recall(&[], &[1, 2]).unwrap(), 0.0);
        assert!(feature_recall(&[1], &[]).is_err());
    }

    fn small_config() -> ExperimentConfig {
        let mut spec = SyntheticSpec::flip_like(5);
        spec.n = 80;
        let mut cfg = ExperimentConfig {
            datasets: vec![DatasetSource::Synthetic { name: "toy".into(), spec }],
            classifiers: vec![ClassifierKind::Gnb],
            k_folds: 2,
            max_explained_per_fold: 5,
            ..ExperimentConfig::default()
        };
        cfg.explain.neighborhood.n_samples = 100;
        cfg.grids
            .insert(ClassifierKind::Gnb, vec![Hyperparams::Gnb { variance_smoothing: 1e-9 }]);
        cfg
    }

    #[test]
    fn zero_threshold_rejects_nothing() {
        let mut cfg = small_config();
        cfg.threshold_override = Some(0.0);
        let table = run_algorithmic_experiment(&cfg, 1).unwrap();
        assert!(table.cells.iter().all(Cell::no_rejects));
        assert!(table.to_text().contains("no rejects observed"));
    }

    #[test]
    fn zero_noise_changes_no_status() {
        let mut cfg = small_config();
        cfg.perturbation.noise_sigma = 0.0;
        let (table, records) = run_groundtruth_with_records(&cfg, 1).unwrap();
        assert!(table.cells.iter().all(Cell::no_rejects));
        assert!(records
            .iter()
            .flat_map(|r| &r.samples)
            .all(|s| s.rejected_before == s.rejected_after && !s.explained));
    }

    #[test]
    fn explained_samples_flip_status() {
        let cfg = small_config();
        let (table, records) = run_groundtruth_with_records(&cfg, 2).unwrap();
        let d = 12;
        for r in &records {
            assert_eq!(r.features.len(), (0.3 * d as f64).ceil() as usize);
            for s in r.samples.iter().filter(|s| s.explained) {
                assert!(!s.rejected_before && s.rejected_after);
            }
        }
        for cell in &table.cells {
            for m in &cell.metrics {
                if let (Some(mean), Some(var)) = (m.mean, m.variance) {
                    assert!((0.0..=1.0).contains(&mean) && var >= 0.0, "{m:?}");
                }
            }
        }
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let cfg = small_config();
        let a = run_algorithmic_experiment(&cfg, 1).unwrap().to_csv_string().unwrap();
        let b = run_algorithmic_experiment(&cfg, 3).unwrap().to_csv_string().unwrap();
        assert_eq!(a, b);
    }
}

//! Python bindings: datasets, classifiers, the conformal reject option,
//! reject explanations and the two experiment protocols.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use rejex::classifiers::{fit_classifier, grid_search};
use rejex::conformal::{accuracy_reject_curve, knee_threshold, Label};
use rejex::data::{load_dataset, make_synthetic, stratified_holdout};
use rejex::experiments::{run_algorithmic_experiment, run_groundtruth_with_records, ExperimentConfig};
use rejex::surrogate::{explain_reject, ExplainConfig};
use rejex::{Classifier, ClassifierKind, ExplanationMode};

fn py_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

#[pyclass(name = "Dataset", module = "pyrejex", from_py_object)]
#[derive(Clone)]
struct PyDataset(rejex::Dataset);

#[pymethods]
impl PyDataset {
    #[staticmethod]
    #[pyo3(signature = (path, label_column = "class", missing_token = ""))]
    fn load(path: &str, label_column: &str, missing_token: &str) -> PyResult<Self> {
        let data = load_dataset(path, label_column, missing_token).map_err(py_err)?;
        Ok(Self(rejex::data::impute_mean(&data).map_err(py_err)?))
    }

    /// Synthetic data from a JSON generator spec.
    #[staticmethod]
    fn synthetic(spec_json: &str) -> PyResult<Self> {
        let spec: rejex::SyntheticSpec = serde_json::from_str(spec_json).map_err(py_err)?;
        Ok(Self(make_synthetic(&spec).map_err(py_err)?))
    }

    #[getter]
    fn n_samples(&self) -> usize {
        self.0.n_samples()
    }

    #[getter]
    fn n_features(&self) -> usize {
        self.0.n_features()
    }

    #[getter]
    fn feature_names(&self) -> Vec<String> {
        self.0.feature_names.clone()
    }

    #[getter]
    fn labels(&self) -> Vec<usize> {
        self.0.labels.clone()
    }

    fn row(&self, i: usize) -> PyResult<Vec<f64>> {
        self.0.features.get(i).cloned().ok_or_else(|| py_err(format!("row {i} out of range")))
    }

    /// Stratified split into (rest, holdout).
    fn split(&self, holdout_fraction: f64, seed: u64) -> (Self, Self) {
        let (a, b) = stratified_holdout(&self.0.labels, holdout_fraction, seed);
        (Self(self.0.subset(&a)), Self(self.0.subset(&b)))
    }

    /// Standardize this set and `others` with statistics from this set.
    fn standardize(&self, others: Vec<PyDataset>) -> PyResult<(Self, Vec<Self>)> {
        let mut targets: Vec<&rejex::Dataset> = vec![&self.0];
        targets.extend(others.iter().map(|d| &d.0));
        let (_, mut scaled) = rejex::data::standardize(&self.0, &targets).map_err(py_err)?;
        let own = scaled.remove(0);
        Ok((Self(own), scaled.into_iter().map(Self).collect()))
    }
}

#[pyclass(name = "Model", module = "pyrejex", skip_from_py_object)]
#[derive(Clone)]
struct PyModel(rejex::Model);

#[pymethods]
impl PyModel {
    /// Fit `kind` (knn, gnb, tree, forest) with hyperparameters picked by
    /// cross-validated grid search on the default grid.
    #[staticmethod]
    #[pyo3(signature = (kind, train, seed = 0))]
    fn fit(kind: &str, train: &PyDataset, seed: u64) -> PyResult<Self> {
        let kind: ClassifierKind = serde_json::from_value(serde_json::Value::String(kind.to_ascii_lowercase()))
            .map_err(|_| py_err(format!("unknown classifier `{kind}`")))?;
        let params = grid_search(&kind.default_grid(), &train.0, seed).map_err(py_err)?;
        Ok(Self(fit_classifier(&params, &train.0, seed).map_err(py_err)?))
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self(serde_json::from_str(text).map_err(py_err)?))
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.0).map_err(py_err)
    }

    fn predict_proba(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        Ok(self.0.predict_proba(&x).map_err(py_err)?.as_slice().to_vec())
    }

    fn accuracy(&self, data: &PyDataset) -> PyResult<f64> {
        rejex::classifiers::accuracy(&self.0, &data.0).map_err(py_err)
    }
}

#[pyclass(name = "ConformalPredictor", module = "pyrejex")]
struct PyConformal(rejex::ConformalPredictor);

#[pymethods]
impl PyConformal {
    #[new]
    fn new(model: &PyModel, calibration: &PyDataset) -> PyResult<Self> {
        Ok(Self(rejex::ConformalPredictor::calibrate(model.0.clone(), &calibration.0).map_err(py_err)?))
    }

    fn p_values(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        self.0.p_values(&x).map_err(py_err)
    }

    fn credibility(&self, x: Vec<f64>) -> PyResult<f64> {
        self.0.credibility(&x).map_err(py_err)
    }

    /// Returns (label or None when rejected, credibility, confidence).
    fn predict_with_reject(&self, x: Vec<f64>, threshold: f64) -> PyResult<(Option<usize>, f64, f64)> {
        let p = self.0.predict_with_reject(&x, threshold).map_err(py_err)?;
        let label = match p.label {
            Label::Class(c) => Some(c),
            Label::Reject => None,
        };
        Ok((label, p.credibility, p.confidence))
    }

    /// Accuracy-reject curve as (theta, rejection_rate, accepted_accuracy).
    fn accuracy_reject_curve(&self, data: &PyDataset) -> PyResult<Vec<(f64, f64, Option<f64>)>> {
        let curve = accuracy_reject_curve(&self.0, &data.0).map_err(py_err)?;
        Ok(curve.points.iter().map(|p| (p.theta, p.rejection_rate, p.accepted_accuracy)).collect())
    }

    /// Kneedle threshold of the accuracy-reject curve on `data`.
    #[pyo3(signature = (data, sensitivity = 1.0))]
    fn knee_threshold(&self, data: &PyDataset, sensitivity: f64) -> PyResult<f64> {
        let curve = accuracy_reject_curve(&self.0, &data.0).map_err(py_err)?;
        Ok(knee_threshold(&curve, sensitivity).map_err(py_err)?.theta)
    }

    /// Explain why `x` is rejected; returns the explanation as JSON.
    #[pyo3(signature = (x, threshold, mode = "cf", seed = 42, config_json = None))]
    fn explain(&self, x: Vec<f64>, threshold: f64, mode: &str, seed: u64, config_json: Option<&str>) -> PyResult<String> {
        let mode: ExplanationMode = mode.parse().map_err(py_err)?;
        let cfg: ExplainConfig = match config_json {
            Some(text) => serde_json::from_str(text).map_err(py_err)?,
            None => ExplainConfig::default(),
        };
        let explanation = explain_reject(&self.0, threshold, &x, mode, &cfg, seed).map_err(py_err)?;
        serde_json::to_string(&explanation).map_err(py_err)
    }
}

fn config(config_json: Option<&str>) -> PyResult<ExperimentConfig> {
    match config_json {
        Some(text) => serde_json::from_str(text).map_err(py_err),
        None => Ok(ExperimentConfig::default()),
    }
}

/// Algorithmic evaluation; returns the result table as CSV.
#[pyfunction]
#[pyo3(signature = (config_json = None, workers = 1))]
fn run_algorithmic(py: Python<'_>, config_json: Option<&str>, workers: usize) -> PyResult<String> {
    let cfg = config(config_json)?;
    let table = py.detach(|| run_algorithmic_experiment(&cfg, workers)).map_err(py_err)?;
    table.to_csv_string().map_err(py_err)
}

/// Ground-truth evaluation; returns (CSV table, perturbation records as JSON).
#[pyfunction]
#[pyo3(signature = (config_json = None, workers = 1))]
fn run_groundtruth(py: Python<'_>, config_json: Option<&str>, workers: usize) -> PyResult<(String, String)> {
    let cfg = config(config_json)?;
    let (table, records) = py.detach(|| run_groundtruth_with_records(&cfg, workers)).map_err(py_err)?;
    Ok((table.to_csv_string().map_err(py_err)?, serde_json::to_string(&records).map_err(py_err)?))
}

#[pymodule]
fn pyrejex(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyConformal>()?;
    m.add_function(wrap_pyfunction!(run_algorithmic, m)?)?;
    m.add_function(wrap_pyfunction!(run_groundtruth, m)?)?;
    Ok(())
}

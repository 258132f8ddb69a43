use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::classifiers::{ClassifierKind, Hyperparams};
use crate::data::{impute_mean, load_dataset, make_synthetic, Dataset, SyntheticSpec};
use crate::error::{Error, Result};
use crate::surrogate::ExplainConfig;

fn default_label_column() -> String {
    "class".into()
}

/// Where an experiment dataset comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase")]
pub enum DatasetSource {
    Csv {
        name: String,
        path: PathBuf,
        #[serde(default = "default_label_column")]
        label_column: String,
        #[serde(default)]
        missing_token: String,
    },
    Synthetic {
        name: String,
        spec: SyntheticSpec,
    },
}

impl DatasetSource {
    pub fn name(&self) -> &str {
        match self {
            DatasetSource::Csv { name, .. } | DatasetSource::Synthetic { name, .. } => name,
        }
    }

    /// Load and mean-impute.
    pub fn load(&self) -> Result<Dataset> {
        let raw = match self {
            DatasetSource::Csv {
                path,
                label_column,
                missing_token,
                ..
            } => load_dataset(path, label_column, missing_token)?,
            DatasetSource::Synthetic { spec, .. } => make_synthetic(spec)?,
        };
        impute_mean(&raw)
    }

    fn resolve(&mut self, base: &Path) {
        if let DatasetSource::Csv { path, .. } = self {
            if path.is_relative() {
                *path = base.join(&*path);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PerturbationConfig {
    /// Share of features that receive noise, rounded up.
    pub feature_fraction: f64,
    /// Noise standard deviation in standardized units.
    pub noise_sigma: f64,
}

impl Default for PerturbationConfig {
    fn default() -> Self {
        PerturbationConfig {
            feature_fraction: 0.3,
            noise_sigma: 1.0,
        }
    }
}

/// Rows in the default synthetic trisomy stand-in.
pub const T21_DEFAULT_ROWS: usize = 5000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub datasets: Vec<DatasetSource>,
    pub classifiers: Vec<ClassifierKind>,
    pub k_folds: usize,
    pub seed: u64,
    /// Share of each training fold held out for conformal calibration.
    pub calibration_fraction: f64,
    pub knee_sensitivity: f64,
    /// Fixed reject threshold instead of the knee of the accuracy-reject curve.
    pub threshold_override: Option<f64>,
    pub explain: ExplainConfig,
    pub perturbation: PerturbationConfig,
    pub max_explained_per_fold: usize,
    /// Per-classifier grid overrides; missing kinds use the default grid.
    pub grids: BTreeMap<ClassifierKind, Vec<Hyperparams>>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            datasets: vec![
                DatasetSource::Csv {
                    name: "Wine".into(),
                    path: "data/wine.csv".into(),
                    label_column: default_label_column(),
                    missing_token: String::new(),
                },
                DatasetSource::Csv {
                    name: "Breast Cancer".into(),
                    path: "data/breast_cancer.csv".into(),
                    label_column: default_label_column(),
                    missing_token: String::new(),
                },
                DatasetSource::Synthetic {
                    name: "t21-synthetic".into(),
                    spec: SyntheticSpec::t21_like(T21_DEFAULT_ROWS, 21),
                },
                DatasetSource::Synthetic {
                    name: "Flip-synthetic".into(),
                    spec: SyntheticSpec::flip_like(118),
                },
            ],
            classifiers: vec![ClassifierKind::Knn, ClassifierKind::Gnb, ClassifierKind::Forest],
            k_folds: 5,
            seed: 42,
            calibration_fraction: 0.3,
            knee_sensitivity: 1.0,
            threshold_override: None,
            explain: ExplainConfig::default(),
            perturbation: PerturbationConfig::default(),
            max_explained_per_fold: 200,
            grids: BTreeMap::new(),
        }
    }
}

impl ExperimentConfig {
    /// Read a JSON config. Relative CSV paths are resolved against the
    /// config file's directory.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: ExperimentConfig = serde_json::from_str(&text)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        for ds in &mut self.datasets {
            ds.resolve(base);
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_folds < 2 {
            return Err(Error::InvalidParameter("k_folds must be at least 2".into()));
        }
        let f = self.perturbation.feature_fraction;
        if !(f > 0.0 && f <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "feature_fraction must lie in (0, 1], got {f}"
            )));
        }
        if !(self.perturbation.noise_sigma >= 0.0) {
            return Err(Error::InvalidParameter("noise_sigma must be nonnegative".into()));
        }
        if !(self.calibration_fraction > 0.0 && self.calibration_fraction < 1.0) {
            return Err(Error::InvalidParameter("calibration_fraction must lie in (0, 1)".into()));
        }
        if let Some(t) = self.threshold_override {
            if !(t >= 0.0) {
                return Err(Error::InvalidParameter("threshold_override must be nonnegative".into()));
            }
        }
        self.explain.neighborhood.validate()?;
        self.explain.cf.validate()?;
        Ok(())
    }

    pub fn grid(&self, kind: ClassifierKind) -> Vec<Hyperparams> {
        self.grids
            .get(&kind)
            .cloned()
            .unwrap_or_else(|| kind.default_grid())
    }
}

//! Dataset ingestion, imputation, standardization and fold splitting.

use std::collections::BTreeMap;
use std::fs::File;
use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// Feature matrix with class labels. Missing cells are stored as `NaN` until
/// [`impute_mean`] has run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub feature_names: Vec<String>,
    pub class_count: usize,
}

impl Dataset {
    pub fn new(
        features: Vec<Vec<f64>>,
        labels: Vec<usize>,
        feature_names: Vec<String>,
        class_count: usize,
    ) -> Result<Self> {
        if features.is_empty() {
            return Err(Error::Empty("dataset has no rows"));
        }
        if feature_names.is_empty() {
            return Err(Error::Empty("dataset has no feature columns"));
        }
        if labels.len() != features.len() {
            return Err(Error::DimensionMismatch {
                expected: features.len(),
                found: labels.len(),
            });
        }
        let d = feature_names.len();
        if let Some(row) = features.iter().find(|r| r.len() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: row.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= class_count) {
            return Err(Error::InvalidParameter(format!(
                "label {bad} outside 0..{class_count}"
            )));
        }
        Ok(Dataset {
            features,
            labels,
            feature_names,
            class_count,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.features.len()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i]
    }

    pub fn has_missing(&self) -> bool {
        self.features.iter().flatten().any(|v| v.is_nan())
    }

    /// Rows at `indices`, in that order. Class count is preserved.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            features: indices.iter().map(|&i| self.features[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            feature_names: self.feature_names.clone(),
            class_count: self.class_count,
        }
    }

    /// Number of samples per class.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_count];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    /// Write the dataset as CSV with the label in a trailing column.
    pub fn write_csv(&self, path: impl AsRef<Path>, label_column: &str) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut writer = csv::Writer::from_writer(file);
        let mut header: Vec<&str> = self.feature_names.iter().map(String::as_str).collect();
        header.push(label_column);
        writer.write_record(&header)?;
        for (row, y) in self.features.iter().zip(&self.labels) {
            let mut record: Vec<String> = row
                .iter()
                .map(|v| if v.is_nan() { String::new() } else { v.to_string() })
                .collect();
            record.push(y.to_string());
            writer.write_record(&record)?;
        }
        writer.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

/// Load a CSV file with a header row. Cells equal to `missing_token` (after
/// trimming) become `NaN` and must be imputed before use.
pub fn load_dataset(
    path: impl AsRef<Path>,
    label_column: &str,
    missing_token: &str,
) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(file);

    let header: Vec<String> = reader
        .headers()?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let label_idx = header
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| Error::MissingLabelColumn(label_column.to_string()))?;
    let feature_names: Vec<String> = header
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != label_idx)
        .map(|(_, h)| h.clone())
        .collect();

    let missing_token = missing_token.trim();
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (row_idx, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != header.len() {
            return Err(Error::InconsistentRowWidth {
                row: row_idx + 1,
                expected: header.len(),
                found: record.len(),
            });
        }
        let mut row = Vec::with_capacity(feature_names.len());
        for (col, cell) in record.iter().enumerate() {
            let cell = cell.trim();
            if col == label_idx {
                labels.push(parse_label(cell)?);
            } else if cell == missing_token {
                row.push(f64::NAN);
            } else {
                let value = cell.parse::<f64>().map_err(|_| Error::NonNumeric {
                    row: row_idx + 1,
                    column: header[col].clone(),
                    value: cell.to_string(),
                })?;
                row.push(value);
            }
        }
        features.push(row);
    }

    let class_count = labels.iter().max().map_or(0, |&m| m + 1);
    Dataset::new(features, labels, feature_names, class_count)
}

fn parse_label(cell: &str) -> Result<usize> {
    if let Ok(y) = cell.parse::<usize>() {
        return Ok(y);
    }
    // Accept integral floats such as "1.0".
    match cell.parse::<f64>() {
        Ok(v) if v >= 0.0 && v.fract() == 0.0 => Ok(v as usize),
        _ => Err(Error::InvalidLabel(cell.to_string())),
    }
}

/// Replace every missing cell by the mean of its column's observed values.
pub fn impute_mean(data: &Dataset) -> Result<Dataset> {
    let d = data.n_features();
    let mut sums = vec![0.0; d];
    let mut counts = vec![0usize; d];
    for row in &data.features {
        for (j, &v) in row.iter().enumerate() {
            if !v.is_nan() {
                sums[j] += v;
                counts[j] += 1;
            }
        }
    }
    if let Some(j) = counts.iter().position(|&c| c == 0) {
        return Err(Error::AllMissing(data.feature_names[j].clone()));
    }
    let means: Vec<f64> = sums
        .iter()
        .zip(&counts)
        .map(|(s, &c)| s / c as f64)
        .collect();

    let mut out = data.clone();
    for row in &mut out.features {
        for (v, &m) in row.iter_mut().zip(&means) {
            if v.is_nan() {
                *v = m;
            }
        }
    }
    Ok(out)
}

/// Per-column mean and population standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalerParams {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl ScalerParams {
    pub fn fit(reference: &Dataset) -> Result<Self> {
        if reference.has_missing() {
            return Err(Error::InvalidParameter(
                "standardization reference contains missing values".into(),
            ));
        }
        let n = reference.n_samples() as f64;
        let d = reference.n_features();
        let mut means = vec![0.0; d];
        for row in &reference.features {
            for (m, v) in means.iter_mut().zip(row) {
                *m += v;
            }
        }
        means.iter_mut().for_each(|m| *m /= n);
        let mut stds = vec![0.0; d];
        for row in &reference.features {
            for ((s, v), m) in stds.iter_mut().zip(row).zip(&means) {
                *s += (v - m) * (v - m);
            }
        }
        stds.iter_mut().for_each(|s| *s = (*s / n).sqrt());
        Ok(ScalerParams { means, stds })
    }

    pub fn dim(&self) -> usize {
        self.means.len()
    }

    /// Standardize one point. Zero-variance columns map to 0.
    pub fn transform(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x.len())?;
        Ok(x.iter()
            .zip(self.means.iter().zip(&self.stds))
            .map(|(v, (m, s))| if *s > 0.0 { (v - m) / s } else { 0.0 })
            .collect())
    }

    /// Map a standardized point back to raw units. Zero-variance columns map
    /// back to their mean.
    pub fn inverse(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(z.len())?;
        Ok(z.iter()
            .zip(self.means.iter().zip(&self.stds))
            .map(|(v, (m, s))| v * s + m)
            .collect())
    }

    pub fn transform_dataset(&self, data: &Dataset) -> Result<Dataset> {
        self.check_dim(data.n_features())?;
        let features = data
            .features
            .iter()
            .map(|row| self.transform(row))
            .collect::<Result<_>>()?;
        Ok(Dataset {
            features,
            ..data.clone()
        })
    }

    fn check_dim(&self, found: usize) -> Result<()> {
        if found != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found,
            });
        }
        Ok(())
    }
}

/// Fit scaling parameters on `reference` and apply them to every target.
pub fn standardize(reference: &Dataset, targets: &[&Dataset]) -> Result<(ScalerParams, Vec<Dataset>)> {
    let params = ScalerParams::fit(reference)?;
    let out = targets
        .iter()
        .map(|t| params.transform_dataset(t))
        .collect::<Result<_>>()?;
    Ok((params, out))
}

/// A partition of row indices into `k` folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub folds: Vec<Vec<usize>>,
}

impl FoldAssignment {
    pub fn k(&self) -> usize {
        self.folds.len()
    }

    /// Indices of every fold except `fold`, ascending.
    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = self
            .folds
            .iter()
            .enumerate()
            .filter(|&(f, _)| f != fold)
            .flat_map(|(_, ix)| ix.iter().copied())
            .collect();
        idx.sort_unstable();
        idx
    }

    pub fn test_indices(&self, fold: usize) -> &[usize] {
        &self.folds[fold]
    }

    fn deal(order: &[usize], k: usize) -> Self {
        let mut folds = vec![Vec::with_capacity(order.len() / k + 1); k];
        for (pos, &i) in order.iter().enumerate() {
            folds[pos % k].push(i);
        }
        for fold in &mut folds {
            fold.sort_unstable();
        }
        FoldAssignment { folds }
    }
}

fn check_folds(n: usize, k: usize) -> Result<()> {
    if k < 2 || k > n {
        return Err(Error::InvalidParameter(format!(
            "fold count {k} must satisfy 2 <= k <= n = {n}"
        )));
    }
    Ok(())
}

/// Shuffled partition of `0..n` into `k` folds whose sizes differ by at most one.
pub fn kfold_split(n: usize, k: usize, seed: u64) -> Result<FoldAssignment> {
    check_folds(n, k)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::rng(seed));
    Ok(FoldAssignment::deal(&order, k))
}

/// Class-stratified k-fold split. Falls back to [`kfold_split`] when some
/// class has fewer than `k` members.
pub fn stratified_kfold(labels: &[usize], k: usize, seed: u64) -> Result<FoldAssignment> {
    let n = labels.len();
    check_folds(n, k)?;
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &y) in labels.iter().enumerate() {
        by_class.entry(y).or_default().push(i);
    }
    if by_class.values().any(|members| members.len() < k) {
        return kfold_split(n, k, seed);
    }
    let mut rng = seed::rng(seed);
    let mut order = Vec::with_capacity(n);
    for members in by_class.values_mut() {
        members.shuffle(&mut rng);
        order.extend_from_slice(members);
    }
    Ok(FoldAssignment::deal(&order, k))
}

/// Split row indices into (train, holdout) with roughly `holdout_fraction`
/// of every class in the holdout part. Each class keeps at least one member on
/// each side when it has two or more.
pub fn stratified_holdout(
    labels: &[usize],
    holdout_fraction: f64,
    seed: u64,
) -> (Vec<usize>, Vec<usize>) {
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &y) in labels.iter().enumerate() {
        by_class.entry(y).or_default().push(i);
    }
    let mut rng = seed::rng(seed);
    let (mut train, mut holdout) = (Vec::new(), Vec::new());
    for members in by_class.values_mut() {
        members.shuffle(&mut rng);
        let m = members.len();
        let mut h = (m as f64 * holdout_fraction).round() as usize;
        if m >= 2 {
            h = h.clamp(1, m - 1);
        } else {
            h = 0;
        }
        holdout.extend_from_slice(&members[..h]);
        train.extend_from_slice(&members[h..]);
    }
    train.sort_unstable();
    holdout.sort_unstable();
    (train, holdout)
}

fn default_separation() -> f64 {
    1.5
}

/// Parameters of a Gaussian-blob synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n: usize,
    pub d: usize,
    pub c: usize,
    pub class_weights: Vec<f64>,
    pub relevant_features: Vec<usize>,
    pub seed: u64,
    /// Scale of the class-mean offsets on relevant features.
    #[serde(default = "default_separation")]
    pub separation: f64,
}

impl SyntheticSpec {
    /// Stand-in with the shape of the fibrosis data: 118 rows, 12 features.
    pub fn flip_like(seed: u64) -> Self {
        SyntheticSpec {
            n: 118,
            d: 12,
            c: 2,
            class_weights: vec![0.6, 0.4],
            relevant_features: vec![0, 2, 5, 7],
            seed,
            separation: default_separation(),
        }
    }

    /// Stand-in with the shape of the trisomy screening data: 18 features,
    /// 0.8 percent positives.
    pub fn t21_like(n: usize, seed: u64) -> Self {
        SyntheticSpec {
            n,
            d: 18,
            c: 2,
            class_weights: vec![0.992, 0.008],
            relevant_features: vec![1, 4, 6, 9, 13, 16],
            seed,
            separation: default_separation(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidParameter("synthetic n must be positive".into()));
        }
        if self.d == 0 {
            return Err(Error::InvalidParameter("synthetic d must be positive".into()));
        }
        if self.c < 1 || self.class_weights.len() != self.c {
            return Err(Error::InvalidParameter(format!(
                "class_weights has {} entries for c = {}",
                self.class_weights.len(),
                self.c
            )));
        }
        if self.class_weights.iter().any(|&w| !(w >= 0.0)) {
            return Err(Error::InvalidParameter("class_weights must be nonnegative".into()));
        }
        let total: f64 = self.class_weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!(
                "class_weights sum to {total}, expected 1"
            )));
        }
        if let Some(&j) = self.relevant_features.iter().find(|&&j| j >= self.d) {
            return Err(Error::InvalidParameter(format!(
                "relevant feature {j} out of range for d = {}",
                self.d
            )));
        }
        if !(self.separation >= 0.0) {
            return Err(Error::InvalidParameter("separation must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Largest-remainder allocation of `n` samples to classes.
fn class_sizes(n: usize, weights: &[f64]) -> Vec<usize> {
    let raw: Vec<f64> = weights.iter().map(|w| w * n as f64).collect();
    let mut sizes: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
    let mut remaining = n - sizes.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = raw[a] - raw[a].floor();
        let fb = raw[b] - raw[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if remaining == 0 {
            break;
        }
        sizes[i] += 1;
        remaining -= 1;
    }
    sizes
}

/// Gaussian class blobs with unit variance. Only the relevant features carry
/// class-dependent means.
pub fn make_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = seed::rng(spec.seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");

    let mut means = vec![vec![0.0; spec.d]; spec.c];
    for class_means in &mut means {
        for &j in &spec.relevant_features {
            class_means[j] = spec.separation * normal.sample(&mut rng);
        }
    }

    let mut labels: Vec<usize> = class_sizes(spec.n, &spec.class_weights)
        .iter()
        .enumerate()
        .flat_map(|(y, &count)| std::iter::repeat_n(y, count))
        .collect();
    labels.shuffle(&mut rng);

    let features = labels
        .iter()
        .map(|&y| {
            means[y]
                .iter()
                .map(|m| m + normal.sample(&mut rng))
                .collect()
        })
        .collect();
    let feature_names = (0..spec.d).map(|j| format!("x{j}")).collect();
    Dataset::new(features, labels, feature_names, spec.c)
}

//! Command-line interface.
//!
//! Exit codes: 0 on success, 1 when the pipeline fails, 2 on usage errors.

use std::ffi::OsString;
use std::fs;
use std::io::{self, Write as _};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::info;
use serde::{Deserialize, Serialize};

use crate::classifiers::{fit_classifier, grid_search, ClassifierKind, Model};
use crate::conformal::{accuracy_reject_curve, knee_threshold, ConformalPredictor, RejectOption};
use crate::data::{impute_mean, load_dataset, make_synthetic, stratified_holdout, Dataset, ScalerParams, SyntheticSpec};
use crate::error::{Error, Result};
use crate::experiments::{
    run_algorithmic_experiment, run_groundtruth_with_records, ExperimentConfig, ResultTable,
};
use crate::seed;
use crate::surrogate::{ExplainConfig, ExplanationMode, LocalSurrogate};

/// Version of the model document layout written by `fit`.
pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Parser)]
#[command(name = "rejex", version, about = "Explain rejects of conformal reject options")]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Experiment config (JSON). Defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory, created if missing.
    #[arg(long, default_value = "results")]
    out: PathBuf,
    /// Override the master seed of the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (defaults to the number of cores). Does not affect results.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Algorithmic properties: surrogate accuracy and explanation sparsity.
    #[command(name = "run-table1")]
    RunTable1(RunArgs),
    /// Ground-truth recovery of perturbed features.
    #[command(name = "run-table2")]
    RunTable2(RunArgs),
    /// Tune, fit and save a classifier together with its feature scaler.
    Fit {
        /// Labeled CSV.
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        classifier: KindArg,
        #[arg(long, default_value = "class")]
        label_column: String,
        #[arg(long, default_value = "")]
        missing_token: String,
        /// Share of rows held out for calibration.
        #[arg(long, default_value_t = 0.3)]
        calib_fraction: f64,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Model document to write.
        #[arg(long)]
        out: PathBuf,
        /// Where to write the held-out calibration rows (CSV, raw units).
        #[arg(long)]
        calib_out: Option<PathBuf>,
    },
    /// Explain why one sample is rejected; prints JSON.
    Explain {
        #[arg(long)]
        model: PathBuf,
        /// Calibration CSV in raw units.
        #[arg(long)]
        calib: PathBuf,
        /// JSON file of the form {"features": [...]} in raw units.
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "cf")]
        mode: ExplanationMode,
        /// Reject threshold; defaults to the knee of the calibration ARC.
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Optional JSON with neighborhood, surrogate and counterfactual settings.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Accuracy-reject curve on the calibration set, with its knee.
    Arc {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        calib: PathBuf,
        /// CSV destination; standard output when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 1.0)]
        sensitivity: f64,
    },
    /// Generate a synthetic dataset from a JSON spec.
    #[command(name = "make-data")]
    MakeData {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Override the spec's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum KindArg {
    Knn,
    Gnb,
    Tree,
    Forest,
}

impl From<KindArg> for ClassifierKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Knn => ClassifierKind::Knn,
            KindArg::Gnb => ClassifierKind::Gnb,
            KindArg::Tree => ClassifierKind::Tree,
            KindArg::Forest => ClassifierKind::Forest,
        }
    }
}

/// A fitted classifier with the scaler that maps raw inputs to its units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub format_version: u32,
    pub model: Model,
    pub scaler: ScalerParams,
    pub feature_names: Vec<String>,
    pub label_column: String,
}

impl ModelDocument {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let value: serde_json::Value = serde_json::from_str(&text)?;
        let version = value.get("format_version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
        if version != MODEL_FORMAT_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        Ok(serde_json::from_value(value)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, serde_json::to_string_pretty(self)? + "\n")
    }

    /// Calibration rows from a raw CSV, mean-imputed and standardized.
    fn calibration(&self, path: &Path) -> Result<Dataset> {
        let raw = impute_mean(&load_dataset(path, &self.label_column, "")?)?;
        self.scaler.transform_dataset(&raw)
    }
}

#[derive(Debug, Deserialize)]
struct SampleInput {
    features: Vec<f64>,
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn load_config(args: &RunArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn workers(args: &RunArgs) -> usize {
    args.workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

fn emit_table(table: &ResultTable, out: &Path, stem: &str) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_file(&out.join(format!("{stem}.csv")), table.to_csv_string()?)?;
    let text = table.to_text();
    write_file(&out.join(format!("{stem}.txt")), &text)?;
    print!("{text}");
    Ok(())
}

fn threshold_or_knee(cp: &ConformalPredictor, calib: &Dataset, threshold: Option<f64>) -> Result<f64> {
    match threshold {
        Some(t) if t >= 0.0 => Ok(t),
        Some(t) => Err(Error::InvalidParameter(format!("threshold must be nonnegative, got {t}"))),
        None => Ok(knee_threshold(&accuracy_reject_curve(cp, calib)?, 1.0)?.theta),
    }
}

#[derive(Serialize)]
struct FeatureChange<'a> {
    index: usize,
    name: &'a str,
    from: f64,
    to: f64,
    delta: f64,
    delta_standardized: f64,
}

#[derive(Serialize)]
struct ExplainOutput<'a> {
    mode: ExplanationMode,
    threshold: f64,
    reject_score: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    fri: Option<Vec<(&'a str, f64)>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    counterfactual: Option<Vec<FeatureChange<'a>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    reject_score_at_counterfactual: Option<f64>,
    sparsity: usize,
    surrogate_consistent: bool,
    sigma: f64,
    retries: usize,
    fidelity: Option<f64>,
}

#[allow(clippy::too_many_arguments)]
fn explain(
    model: &Path,
    calib: &Path,
    input: &Path,
    mode: ExplanationMode,
    threshold: Option<f64>,
    seed: u64,
    config: Option<&Path>,
) -> Result<()> {
    let doc = ModelDocument::load(model)?;
    let calib = doc.calibration(calib)?;
    let text = fs::read_to_string(input).map_err(|e| Error::io(input, e))?;
    let sample: SampleInput = serde_json::from_str(&text)?;
    let explain_cfg: ExplainConfig = match config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str(&text)?
        }
        None => ExplainConfig::default(),
    };
    explain_cfg.neighborhood.validate()?;
    explain_cfg.cf.validate()?;

    let cp = ConformalPredictor::calibrate(doc.model.clone(), &calib)?;
    let theta = threshold_or_knee(&cp, &calib, threshold)?;
    let z = doc.scaler.transform(&sample.features)?;
    let surrogate = LocalSurrogate::fit(&cp, theta, &z, &explain_cfg, seed)?;
    let explanation = match mode {
        ExplanationMode::FeatImp => surrogate.feature_importance(),
        ExplanationMode::Cf => surrogate.counterfactual(&cp, &explain_cfg.cf)?,
    };

    let names = &doc.feature_names;
    let fri = explanation
        .fri
        .as_ref()
        .map(|fri| names.iter().map(String::as_str).zip(fri.iter().copied()).collect());
    let counterfactual = match &explanation.x_cf {
        Some(z_cf) => {
            let x_cf = doc.scaler.inverse(z_cf)?;
            let changed = explanation.features(&z, explain_cfg.cf.tolerance);
            Some(
                changed
                    .into_iter()
                    .map(|j| FeatureChange {
                        index: j,
                        name: &names[j],
                        from: sample.features[j],
                        to: x_cf[j],
                        delta: x_cf[j] - sample.features[j],
                        delta_standardized: z_cf[j] - z[j],
                    })
                    .collect(),
            )
        }
        None => None,
    };
    let out = ExplainOutput {
        mode,
        threshold: theta,
        reject_score: cp.reject_score(&z)?,
        fri,
        counterfactual,
        reject_score_at_counterfactual: explanation.reject_score_at_cf,
        sparsity: explanation.sparsity,
        surrogate_consistent: explanation.surrogate_consistent,
        sigma: explanation.sigma,
        retries: explanation.retries,
        fidelity: explanation.fidelity,
    };
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn fit(
    data: &Path,
    kind: ClassifierKind,
    label_column: &str,
    missing_token: &str,
    calib_fraction: f64,
    seed: u64,
    out: &Path,
    calib_out: Option<&Path>,
) -> Result<()> {
    if !(calib_fraction > 0.0 && calib_fraction < 1.0) {
        return Err(Error::InvalidParameter("calib-fraction must lie in (0, 1)".into()));
    }
    let data = impute_mean(&load_dataset(data, label_column, missing_token)?)?;
    let (train_idx, calib_idx) = stratified_holdout(&data.labels, calib_fraction, seed::derive(seed, &[0]));
    let raw_train = data.subset(&train_idx);
    let scaler = ScalerParams::fit(&raw_train)?;
    let train = scaler.transform_dataset(&raw_train)?;
    let params = grid_search(&kind.default_grid(), &train, seed::derive(seed, &[1]))?;
    info!("selected {params:?}");
    let model = fit_classifier(&params, &train, seed::derive(seed, &[2]))?;
    ModelDocument {
        format_version: MODEL_FORMAT_VERSION,
        model,
        scaler,
        feature_names: data.feature_names.clone(),
        label_column: label_column.to_string(),
    }
    .save(out)?;
    if let Some(path) = calib_out {
        data.subset(&calib_idx).write_csv(path, label_column)?;
    }
    Ok(())
}

fn arc(model: &Path, calib: &Path, out: Option<&Path>, sensitivity: f64) -> Result<()> {
    let doc = ModelDocument::load(model)?;
    let calib = doc.calibration(calib)?;
    let cp = ConformalPredictor::calibrate(doc.model.clone(), &calib)?;
    let curve = accuracy_reject_curve(&cp, &calib)?;
    let knee = knee_threshold(&curve, sensitivity)?;
    match out {
        Some(path) => {
            let mut buf = Vec::new();
            curve.write_csv(&mut buf)?;
            write_file(path, buf)?;
            println!("knee_theta={} fallback={}", knee.theta, knee.fallback);
        }
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            curve.write_csv(&mut lock)?;
            lock.flush().map_err(|e| Error::io("<stdout>", e))?;
            eprintln!("knee_theta={} fallback={}", knee.theta, knee.fallback);
        }
    }
    Ok(())
}

fn make_data(spec: &Path, out: &Path, seed: Option<u64>) -> Result<()> {
    let text = fs::read_to_string(spec).map_err(|e| Error::io(spec, e))?;
    let mut spec: SyntheticSpec = serde_json::from_str(&text)?;
    if let Some(s) = seed {
        spec.seed = s;
    }
    make_synthetic(&spec)?.write_csv(out, "class")
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::RunTable1(args) => {
            let cfg = load_config(&args)?;
            let table = run_algorithmic_experiment(&cfg, workers(&args))?;
            emit_table(&table, &args.out, "table1")
        }
        Command::RunTable2(args) => {
            let cfg = load_config(&args)?;
            let (table, records) = run_groundtruth_with_records(&cfg, workers(&args))?;
            emit_table(&table, &args.out, "table2")?;
            write_file(
                &args.out.join("table2_perturbations.json"),
                serde_json::to_string(&records)? + "\n",
            )
        }
        Command::Fit {
            data,
            classifier,
            label_column,
            missing_token,
            calib_fraction,
            seed,
            out,
            calib_out,
        } => fit(
            &data,
            classifier.into(),
            &label_column,
            &missing_token,
            calib_fraction,
            seed,
            &out,
            calib_out.as_deref(),
        ),
        Command::Explain {
            model,
            calib,
            input,
            mode,
            threshold,
            seed,
            config,
        } => explain(&model, &calib, &input, mode, threshold, seed, config.as_deref()),
        Command::Arc {
            model,
            calib,
            out,
            sensitivity,
        } => arc(&model, &calib, out.as_deref(), sensitivity),
        Command::MakeData { spec, out, seed } => make_data(&spec, &out, seed),
    }
}

/// Parse `argv` (including the program name) and run the subcommand.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).try_init();
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

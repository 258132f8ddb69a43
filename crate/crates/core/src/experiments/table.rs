use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    /// Surrogate consistency and explanation sparsity.
    Algorithmic,
    /// Recovery of deliberately perturbed features.
    GroundTruth,
}

impl Protocol {
    /// Metric names shown in the text table, in column order.
    pub fn columns(self) -> [&'static str; 3] {
        match self {
            Protocol::Algorithmic => ["accuracy", "featimp_sparsity", "cf_sparsity"],
            Protocol::GroundTruth => ["accuracy", "featimp_recall", "cf_recall"],
        }
    }
}

/// Mean and population variance of a metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub name: String,
    pub mean: Option<f64>,
    pub variance: Option<f64>,
    pub count: usize,
}

impl MetricSummary {
    pub fn from_values(name: &str, values: &[f64]) -> Self {
        let count = values.len();
        if count == 0 {
            return MetricSummary {
                name: name.into(),
                mean: None,
                variance: None,
                count,
            };
        }
        let mean = values.iter().sum::<f64>() / count as f64;
        let variance = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / count as f64;
        MetricSummary {
            name: name.into(),
            mean: Some(mean),
            variance: Some(variance),
            count,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub classifier: String,
    pub dataset: String,
    pub metrics: Vec<MetricSummary>,
    pub n_explained: usize,
    /// Samples whose explanation pipeline returned an error.
    pub n_failed: usize,
    /// Reject threshold used in each fold.
    pub thresholds: Vec<f64>,
}

impl Cell {
    pub fn metric(&self, name: &str) -> Option<&MetricSummary> {
        self.metrics.iter().find(|m| m.name == name)
    }

    pub fn mean(&self, name: &str) -> Option<f64> {
        self.metric(name).and_then(|m| m.mean)
    }

    pub fn no_rejects(&self) -> bool {
        self.n_explained == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub protocol: Protocol,
    pub cells: Vec<Cell>,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

impl ResultTable {
    pub fn cell(&self, classifier: &str, dataset: &str) -> Option<&Cell> {
        self.cells
            .iter()
            .find(|c| c.classifier == classifier && c.dataset == dataset)
    }

    /// Long-format CSV: `classifier,dataset,metric,mean,variance,n_explained`.
    /// Undefined values are written as `NA`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut writer = csv::Writer::from_writer(out);
        writer.write_record(["classifier", "dataset", "metric", "mean", "variance", "n_explained"])?;
        for cell in &self.cells {
            for m in &cell.metrics {
                writer.write_record([
                    cell.classifier.clone(),
                    cell.dataset.clone(),
                    m.name.clone(),
                    fmt_opt(m.mean),
                    fmt_opt(m.variance),
                    cell.n_explained.to_string(),
                ])?;
            }
        }
        writer.flush().map_err(|e| Error::io("<result csv>", e))?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }

    /// Fixed-width text table, values rounded to two decimals as
    /// `mean ± variance`.
    pub fn to_text(&self) -> String {
        let headers = match self.protocol {
            Protocol::Algorithmic => ["Accuracy", "FeatImp", "Cf"],
            Protocol::GroundTruth => ["Accuracy", "FeatImp", "Cf"],
        };
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<14} {:<16} {:>14} {:>14} {:>14} {:>6}",
            "Classifier", "DataSet", headers[0], headers[1], headers[2], "n"
        );
        let _ = writeln!(out, "{}", "-".repeat(84));
        for cell in &self.cells {
            let cols: Vec<String> = self
                .protocol
                .columns()
                .iter()
                .map(|name| match cell.metric(name) {
                    Some(MetricSummary {
                        mean: Some(m),
                        variance: Some(v),
                        ..
                    }) => format!("{m:.2} ± {v:.2}"),
                    _ => "-".to_string(),
                })
                .collect();
            let _ = write!(
                out,
                "{:<14} {:<16} {:>14} {:>14} {:>14} {:>6}",
                cell.classifier, cell.dataset, cols[0], cols[1], cols[2], cell.n_explained
            );
            if cell.no_rejects() {
                out.push_str("  (no rejects observed)");
            }
            out.push('\n');
        }
        out
    }
}

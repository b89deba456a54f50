use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::train::{EpochRecord, TrainConfig};
use crate::codec::canonical_json;
use crate::error::Result;
use crate::model::ModelConfig;

pub const REPORT_FORMAT_VERSION: u32 = 1;
pub const CSV_HEADER: [&str; 4] = ["subject", "ACC (%)", "AUC", "F1-macro (%)"];
pub const STD_CONVENTION: &str = "population standard deviation over subjects (divide by n)";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectRow {
    pub subject: String,
    pub acc: f64,
    pub auc: f64,
    pub macro_f1: f64,
    pub n_test: usize,
    pub best_epoch: usize,
    pub best_val_acc: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self { mean: f64::NAN, std: f64::NAN };
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Self { mean, std: var.sqrt() }
    }

    pub fn format(&self, decimals: usize) -> String {
        format!("{:.*}±{:.*}", decimals, self.mean, decimals, self.std)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub acc: MeanStd,
    pub auc: MeanStd,
    pub macro_f1: MeanStd,
}

impl Aggregate {
    pub fn of(rows: &[SubjectRow]) -> Self {
        let col = |f: fn(&SubjectRow) -> f64| MeanStd::of(&rows.iter().map(f).collect::<Vec<_>>());
        Self { acc: col(|r| r.acc), auc: col(|r| r.auc), macro_f1: col(|r| r.macro_f1) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldHistory {
    pub subject: String,
    pub history: Vec<EpochRecord>,
}

/// Per-subject leave-one-subject-out results and their aggregate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub format_version: u32,
    pub label: String,
    pub config_fingerprint: String,
    pub model_config: ModelConfig,
    pub train_config: TrainConfig,
    pub param_count: usize,
    pub n_tokens: usize,
    pub std_convention: String,
    pub metric_definitions: BTreeMap<String, String>,
    pub rows: Vec<SubjectRow>,
    pub aggregate: Aggregate,
    pub histories: Vec<FoldHistory>,
}

/// Hex SHA-256 of the canonical JSON of both configurations.
pub fn config_fingerprint(mc: &ModelConfig, tc: &TrainConfig) -> Result<String> {
    let json = canonical_json(&serde_json::json!({ "model": mc, "train": tc }))?;
    Ok(Sha256::digest(json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect())
}

pub fn metric_definitions() -> BTreeMap<String, String> {
    [
        ("acc", "100 * correct / n on the held-out subject"),
        ("auc", "(concordant + 0.5 * tied positive/negative pairs) / (n_pos * n_neg), class-1 softmax scores"),
        ("macro_f1", "100 * mean over classes of 2TP / (2TP + FP + FN), 0/0 taken as 0"),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v.to_string()))
    .collect()
}

impl ExperimentReport {
    pub fn new(
        label: &str,
        mc: &ModelConfig,
        tc: &TrainConfig,
        rows: Vec<SubjectRow>,
        histories: Vec<FoldHistory>,
    ) -> Result<Self> {
        Ok(Self {
            format_version: REPORT_FORMAT_VERSION,
            label: label.to_string(),
            config_fingerprint: config_fingerprint(mc, tc)?,
            model_config: mc.clone(),
            train_config: tc.clone(),
            param_count: crate::model::param_count(mc),
            n_tokens: mc.n_tokens(),
            std_convention: STD_CONVENTION.to_string(),
            metric_definitions: metric_definitions(),
            aggregate: Aggregate::of(&rows),
            rows,
            histories,
        })
    }

    /// One row per subject plus a `mean±std` row.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(CSV_HEADER)?;
        for r in &self.rows {
            w.write_record([
                r.subject.clone(),
                format!("{:.2}", r.acc),
                format!("{:.4}", r.auc),
                format!("{:.2}", r.macro_f1),
            ])?;
        }
        let a = &self.aggregate;
        w.write_record(["mean±std".to_string(), a.acc.format(2), a.auc.format(4), a.macro_f1.format(2)])?;
        Ok(String::from_utf8(w.into_inner().map_err(|e| e.into_error())?).expect("csv output is UTF-8"))
    }

    pub fn to_json(&self) -> Result<String> {
        canonical_json(self)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// Writes `<stem>.csv` and `<stem>.json` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>, stem: &str) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(format!("{stem}.csv")), self.to_csv()?)?;
        std::fs::write(dir.join(format!("{stem}.json")), self.to_json()?)?;
        Ok(())
    }
}

/// One `mean±std` row per report, keyed by `label_header`
/// (e.g. a patch-length or variant column).
pub fn summary_table(label_header: &str, reports: &[ExperimentReport]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([label_header, CSV_HEADER[1], CSV_HEADER[2], CSV_HEADER[3]])?;
    for r in reports {
        let a = &r.aggregate;
        w.write_record([r.label.clone(), a.acc.format(2), a.auc.format(4), a.macro_f1.format(2)])?;
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| e.into_error())?).expect("csv output is UTF-8"))
}

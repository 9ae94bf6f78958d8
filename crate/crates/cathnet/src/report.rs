//! Run artifacts: report.json, per_sample.csv, difficulty_curves.csv and
//! train_log.csv.

use std::fs::{self, File, OpenOptions};
use std::path::{Path, PathBuf};

use cathnet_core::metrics::EvalReport;
use cathnet_core::prioritizer::{CurveRow, CurveSink};
use serde::Serialize;

use crate::trainer::StepLog;

#[derive(Debug, thiserror::Error)]
pub enum ArtifactError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
}

/// Percentages rounded to two decimals.
pub fn pct(x: f64) -> f64 {
    (x * 10_000.0).round() / 100.0
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportJson {
    pub split: String,
    pub samples: usize,
    pub iterations: u64,
    /// Percent.
    pub ap: f64,
    pub mean_j: f64,
    pub mean_kpi: f64,
    /// Pixels.
    pub mae_px: f64,
    pub rmse_px: f64,
}

impl ReportJson {
    pub fn new(r: &EvalReport, split: &str, iterations: u64) -> Self {
        Self {
            split: split.into(),
            samples: r.per_sample.len(),
            iterations,
            ap: pct(r.ap),
            mean_j: pct(r.mean_j),
            mean_kpi: pct(r.mean_kpi),
            mae_px: round2(r.mae_px),
            rmse_px: round2(r.rmse_px),
        }
    }
}

/// Write `report.json` and `per_sample.csv` into `dir`.
pub fn write_report(dir: &Path, r: &EvalReport, split: &str, iterations: u64) -> Result<(), ArtifactError> {
    let path = dir.join("report.json");
    let json = serde_json::to_string_pretty(&ReportJson::new(r, split, iterations)).expect("report serializes");
    fs::write(&path, json + "\n").map_err(|source| ArtifactError::Io { path: path.clone(), source })?;

    let path = dir.join("per_sample.csv");
    let csv_err = |source| ArtifactError::Csv { path: path.clone(), source };
    let mut w = csv::Writer::from_path(&path).map_err(csv_err)?;
    w.write_record(["id", "ap50", "j", "mae", "rmse"]).map_err(csv_err)?;
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.4}"));
    for s in &r.per_sample {
        w.write_record([s.id.clone(), format!("{:.4}", s.ap50), format!("{:.4}", s.j), opt(s.mae), opt(s.rmse)])
            .map_err(csv_err)?;
    }
    w.flush().map_err(|source| ArtifactError::Io { path: path.clone(), source })
}

/// Keep the header and the rows whose first column is at most `upto`, so a
/// resumed run continues a file cut back to its checkpoint.
fn truncate_rows(path: &Path, upto: u64) -> Result<(), ArtifactError> {
    let io = |source| ArtifactError::Io { path: path.into(), source };
    let text = fs::read_to_string(path).map_err(io)?;
    let mut lines = text.lines();
    let mut kept = String::new();
    if let Some(h) = lines.next() {
        kept.push_str(h);
        kept.push('\n');
    }
    for l in lines {
        if l.split(',').next().and_then(|v| v.parse::<u64>().ok()).is_some_and(|t| t <= upto) {
            kept.push_str(l);
            kept.push('\n');
        }
    }
    fs::write(path, kept).map_err(io)
}

/// Open a CSV for a run starting after `start` completed iterations.
fn open_csv(path: &Path, start: u64, header: &[&str]) -> Result<csv::Writer<File>, ArtifactError> {
    let io = |source| ArtifactError::Io { path: path.into(), source };
    let resume = start > 0 && path.exists();
    if resume {
        truncate_rows(path, start)?;
    }
    let file = OpenOptions::new().create(true).append(resume).write(true).truncate(!resume).open(path).map_err(io)?;
    let mut w = csv::Writer::from_writer(file);
    if !resume {
        w.write_record(header).map_err(|source| ArtifactError::Csv { path: path.into(), source })?;
    }
    Ok(w)
}

/// `difficulty_curves.csv`: tau,sample_id,task,difficulty,selected
pub struct CurveCsv {
    path: PathBuf,
    w: csv::Writer<File>,
}

impl CurveCsv {
    pub fn open(path: &Path, start: u64) -> Result<Self, ArtifactError> {
        Ok(Self {
            path: path.into(),
            w: open_csv(path, start, &["tau", "sample_id", "task", "difficulty", "selected"])?,
        })
    }

    pub fn flush(&mut self) -> Result<(), ArtifactError> {
        self.w.flush().map_err(|source| ArtifactError::Io { path: self.path.clone(), source })
    }
}

impl CurveSink for CurveCsv {
    type Error = csv::Error;
    fn append(&mut self, r: &CurveRow) -> Result<(), csv::Error> {
        self.w.write_record([
            r.tau.to_string(),
            r.sample_id.to_string(),
            r.task.code().to_string(),
            format!("{:.6}", r.difficulty),
            (r.selected as u8).to_string(),
        ])
    }
}

/// `train_log.csv`: one row per iteration.
pub struct TrainLog {
    path: PathBuf,
    w: csv::Writer<File>,
}

impl TrainLog {
    pub const HEADER: [&'static str; 9] =
        ["iteration", "total", "detection", "segmentation", "w_d", "w_s", "kpi_d", "kpi_s", "selected"];

    pub fn open(path: &Path, start: u64) -> Result<Self, ArtifactError> {
        Ok(Self { path: path.into(), w: open_csv(path, start, &Self::HEADER)? })
    }

    pub fn append(&mut self, l: &StepLog) -> Result<(), ArtifactError> {
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:e}"));
        self.w
            .write_record([
                l.iteration.to_string(),
                opt(l.total),
                opt(l.detection),
                opt(l.segmentation),
                format!("{:e}", l.weights[0]),
                format!("{:e}", l.weights[1]),
                opt(l.batch_kpi[0]),
                opt(l.batch_kpi[1]),
                format!("{}/{}", l.selected[0], l.selected[1]),
            ])
            .map_err(|source| ArtifactError::Csv { path: self.path.clone(), source })
    }

    pub fn flush(&mut self) -> Result<(), ArtifactError> {
        self.w.flush().map_err(|source| ArtifactError::Io { path: self.path.clone(), source })
    }
}

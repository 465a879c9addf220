//! Metrics export: the per-step CSV and the per-run JSON summary.
//!
//! The CSV is deterministic for a fixed run (no wall-clock fields), so two
//! runs with the same config and seed produce byte-identical files. Timing
//! lives in the summary instead.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::churn::{MetricKind, StepRecord};
use crate::data::DataError;
use crate::scalar::Scalar;

/// Fixed header of the per-step metrics CSV.
pub const CSV_HEADER: [&str; 8] = [
    "step",
    "cumulative_iterations",
    "train_metric",
    "test_metric",
    "current_e",
    "candidates",
    "swapped_out",
    "swapped_in",
];

/// Format a float with 9 significant digits, the precision used everywhere
/// in exported CSVs.
pub fn format_sig9(value: f64) -> String {
    format!("{value:.8e}")
}

/// Write one metrics row per churn step. Swapped-out features are serialized
/// as `descriptor:score` pairs joined by `;`, swapped-in features as
/// descriptors joined by `;`.
pub fn export_metrics<T: Scalar>(
    records: &[StepRecord<T>],
    path: &Path,
) -> Result<(), DataError> {
    let file = File::create(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut writer = csv::Writer::from_writer(BufWriter::new(file));
    let io_err = |source: csv::Error| DataError::Io {
        path: path.display().to_string(),
        source: std::io::Error::new(std::io::ErrorKind::Other, source),
    };
    writer.write_record(CSV_HEADER).map_err(io_err)?;
    for record in records {
        let swapped_out = record
            .swapped_out
            .iter()
            .map(|(desc, score)| format!("{desc}:{}", format_sig9(score.as_f64())))
            .collect::<Vec<_>>()
            .join(";");
        let swapped_in = record
            .swapped_in
            .iter()
            .map(|desc| desc.to_string())
            .collect::<Vec<_>>()
            .join(";");
        writer
            .write_record([
                record.step.to_string(),
                record.cumulative_iterations.to_string(),
                format_sig9(record.train_metric.as_f64()),
                format_sig9(record.test_metric.as_f64()),
                record.current_e.to_string(),
                record.candidate_count.to_string(),
                swapped_out,
                swapped_in,
            ])
            .map_err(io_err)?;
    }
    writer.flush().map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(())
}

/// Closing record of one run: termination reason, totals and final metrics.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RunSummary {
    pub experiment: String,
    pub seed: u64,
    pub metric: String,
    pub termination: String,
    pub steps: usize,
    pub total_iterations: usize,
    pub final_train_metric: f64,
    pub final_test_metric: f64,
    pub elapsed_ms: u64,
}

impl RunSummary {
    pub fn from_records<T: Scalar>(
        experiment: &str,
        seed: u64,
        metric: MetricKind,
        termination: &str,
        total_iterations: usize,
        elapsed_ms: u64,
        records: &[StepRecord<T>],
    ) -> Self {
        let last = records.last();
        Self {
            experiment: experiment.to_string(),
            seed,
            metric: metric.as_str().to_string(),
            termination: termination.to_string(),
            steps: records.len(),
            total_iterations,
            final_train_metric: last.map(|r| r.train_metric.as_f64()).unwrap_or(f64::NAN),
            final_test_metric: last.map(|r| r.test_metric.as_f64()).unwrap_or(f64::NAN),
            elapsed_ms,
        }
    }
}

pub fn write_summary(summary: &RunSummary, path: &Path) -> Result<(), DataError> {
    let io_err = |source: std::io::Error| DataError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = File::create(path).map_err(io_err)?;
    let mut writer = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut writer, summary).map_err(|e| DataError::Io {
        path: path.display().to_string(),
        source: std::io::Error::new(std::io::ErrorKind::Other, e),
    })?;
    writer.write_all(b"\n").map_err(io_err)?;
    Ok(())
}

pub fn read_summary(path: &Path) -> Result<RunSummary, DataError> {
    let text = std::fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| DataError::Io {
        path: path.display().to_string(),
        source: std::io::Error::new(std::io::ErrorKind::InvalidData, e),
    })
}

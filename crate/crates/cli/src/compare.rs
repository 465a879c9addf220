//! Aggregate the per-trial summaries of two or more run directories into a
//! side-by-side comparison table.

use std::fs;
use std::path::{Path, PathBuf};

use churn_core::metrics::{format_sig9, read_summary, RunSummary};

use crate::error::CliError;

#[derive(Debug, Clone)]
pub struct ArmStats {
    pub arm: String,
    pub metric: String,
    pub trials: usize,
    pub mean_train: f64,
    pub mean_test: f64,
    pub mean_elapsed_ms: f64,
    pub per_trial: Vec<RunSummary>,
}

fn arm_name(dir: &Path) -> String {
    dir.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string())
}

fn load_arm(dir: &Path) -> Result<ArmStats, CliError> {
    let entries = fs::read_dir(dir)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", dir.display())))?;
    let mut summaries = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| CliError::Data(e.to_string()))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.starts_with("summary_") && name.ends_with(".json") {
            summaries.push(read_summary(&entry.path())?);
        }
    }
    if summaries.is_empty() {
        return Err(CliError::Data(format!(
            "{}: no summary_*.json files found",
            dir.display()
        )));
    }
    summaries.sort_by_key(|s| s.seed);
    let metric = summaries[0].metric.clone();
    if summaries.iter().any(|s| s.metric != metric) {
        return Err(CliError::Data(format!(
            "{}: mixed metric kinds in one arm",
            dir.display()
        )));
    }
    let n = summaries.len() as f64;
    Ok(ArmStats {
        arm: arm_name(dir),
        metric,
        trials: summaries.len(),
        mean_train: summaries.iter().map(|s| s.final_train_metric).sum::<f64>() / n,
        mean_test: summaries.iter().map(|s| s.final_test_metric).sum::<f64>() / n,
        mean_elapsed_ms: summaries.iter().map(|s| s.elapsed_ms as f64).sum::<f64>() / n,
        per_trial: summaries,
    })
}

pub fn compare(dirs: &[PathBuf], out_csv: &Path) -> Result<Vec<ArmStats>, CliError> {
    let arms: Vec<ArmStats> = dirs.iter().map(|d| load_arm(d)).collect::<Result<_, _>>()?;
    let metric = &arms[0].metric;
    if arms.iter().any(|a| &a.metric != metric) {
        return Err(CliError::Data(
            "arms use different metrics and cannot be compared".into(),
        ));
    }

    let mut writer = csv::Writer::from_path(out_csv).map_err(|e| {
        CliError::Data(format!("cannot write {}: {e}", out_csv.display()))
    })?;
    writer
        .write_record([
            "arm",
            "kind",
            "seed",
            "trials",
            "train_metric",
            "test_metric",
            "elapsed_ms",
        ])
        .map_err(|e| CliError::Data(e.to_string()))?;
    for arm in &arms {
        for trial in &arm.per_trial {
            writer
                .write_record([
                    arm.arm.clone(),
                    "trial".into(),
                    trial.seed.to_string(),
                    "1".into(),
                    format_sig9(trial.final_train_metric),
                    format_sig9(trial.final_test_metric),
                    trial.elapsed_ms.to_string(),
                ])
                .map_err(|e| CliError::Data(e.to_string()))?;
        }
        writer
            .write_record([
                arm.arm.clone(),
                "mean".into(),
                String::new(),
                arm.trials.to_string(),
                format_sig9(arm.mean_train),
                format_sig9(arm.mean_test),
                format!("{:.1}", arm.mean_elapsed_ms),
            ])
            .map_err(|e| CliError::Data(e.to_string()))?;
    }
    writer.flush().map_err(|e| CliError::Data(e.to_string()))?;
    Ok(arms)
}

pub fn render_table(arms: &[ArmStats]) -> String {
    let metric = &arms[0].metric;
    let mut out = String::new();
    out.push_str(&format!(
        "{:<28} {:>8} {:>16} {:>16} {:>14}\n",
        "arm",
        "trials",
        format!("mean train {metric}"),
        format!("mean test {metric}"),
        "mean time (ms)"
    ));
    for arm in arms {
        out.push_str(&format!(
            "{:<28} {:>8} {:>16} {:>16} {:>14.1}\n",
            arm.arm,
            arm.trials,
            format!("{:.6}", arm.mean_train),
            format!("{:.6}", arm.mean_test),
            arm.mean_elapsed_ms
        ));
    }
    out
}

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use walkdir::WalkDir;

use super::run::{RunResult, RunStatus};
use super::CliError;
use crate::analysis::MetricsRecord;
use crate::net::ActivationTag;
use crate::pinn::ProblemName;

/// One row of the summary table: a problem, an activation and, for scaled
/// activations, the initial scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub problem: ProblemName,
    pub activation: ActivationTag,
    pub beta_init: Option<f64>,
    /// Completed seeds contributing to the means.
    pub seeds: usize,
    pub aborted: usize,
    pub mean_mse: Option<f64>,
    pub mean_re: Option<f64>,
    pub mean_final_loss: Option<f64>,
    pub mean_kappa: Option<f64>,
}

type Key = (ProblemName, ActivationTag, Option<u64>);

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

/// Collect every `result.json` under `dir`, write `summary.csv` and
/// `summary.json` into `dir` and return the rows.
pub fn aggregate(dir: &Path) -> Result<Vec<SummaryRow>, CliError> {
    let mut files: Vec<_> = WalkDir::new(dir)
        .into_iter()
        .filter_map(Result::ok)
        .filter(|e| e.file_type().is_file() && e.file_name() == "result.json")
        .map(|e| e.into_path())
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::Io(format!("no result.json under {}", dir.display())));
    }

    let mut groups: BTreeMap<Key, Vec<RunResult>> = BTreeMap::new();
    for path in files {
        let text = fs::read_to_string(&path).map_err(|e| CliError::io(path.display(), e))?;
        let result: RunResult = serde_json::from_str(&text).map_err(|e| CliError::io(path.display(), e))?;
        let key = (result.problem, result.activation, result.beta_init.map(f64::to_bits));
        groups.entry(key).or_default().push(result);
    }

    let rows: Vec<SummaryRow> = groups
        .into_iter()
        .map(|((problem, activation, beta), runs)| {
            let done: Vec<&RunResult> = runs.iter().filter(|r| r.status == RunStatus::Completed).collect();
            let record = MetricsRecord::from_seeds(done.iter().filter_map(|r| r.metrics).collect());
            let losses: Vec<f64> = done.iter().filter_map(|r| r.final_loss.map(|l| l.total)).collect();
            let kappas: Vec<f64> = done.iter().filter_map(|r| r.kappa).collect();
            SummaryRow {
                problem,
                activation,
                beta_init: beta.map(f64::from_bits),
                seeds: done.len(),
                aborted: runs.len() - done.len(),
                mean_mse: (!done.is_empty()).then_some(record.mean_mse),
                mean_re: if done.is_empty() { None } else { record.mean_re },
                mean_final_loss: mean(&losses),
                mean_kappa: mean(&kappas),
            }
        })
        .collect();

    let csv_path = dir.join("summary.csv");
    let io = |e: csv::Error| CliError::io(csv_path.display(), e);
    let mut w = csv::Writer::from_path(&csv_path).map_err(io)?;
    for row in &rows {
        w.serialize(row).map_err(io)?;
    }
    w.flush().map_err(|e| CliError::io(csv_path.display(), e))?;
    let json_path = dir.join("summary.json");
    let text = serde_json::to_string_pretty(&rows).map_err(|e| CliError::io(json_path.display(), e))?;
    fs::write(&json_path, text + "\n").map_err(|e| CliError::io(json_path.display(), e))?;
    Ok(rows)
}

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{Resolved, RunConfig};
use super::{aggregate, CliError, SummaryRow, WORKERS_ENV};
use crate::analysis::Metrics;
use crate::net::{ActivationTag, ParamSet};
use crate::pinn::{linspace, test_metrics, train, Event, LossReport, ProblemName, TraceRow};

pub const TRACE_HEADER: [&str; 6] = ["epoch", "loss_total", "loss_residual", "loss_data", "beta_tracked", "kappa"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Completed,
    Aborted,
}

/// Loss components at the final parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FinalLoss {
    pub total: f64,
    pub residual: f64,
    pub data: f64,
    pub derivative: f64,
    pub regularizer: f64,
}

impl From<&LossReport> for FinalLoss {
    fn from(r: &LossReport) -> Self {
        FinalLoss { total: r.total, residual: r.mse_f, data: r.mse_u, derivative: r.mse_g, regularizer: r.regularizer }
    }
}

/// Everything recorded about one seed; written as `result.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub problem: ProblemName,
    pub activation: ActivationTag,
    pub beta_init: Option<f64>,
    pub seed: u64,
    pub status: RunStatus,
    pub error: Option<String>,
    pub epochs_run: usize,
    pub final_loss: Option<FinalLoss>,
    /// Test-grid error; absent for aborted runs.
    pub metrics: Option<Metrics>,
    pub kappa: Option<f64>,
    pub wall_time_s: f64,
    pub events: Vec<Event>,
    pub trace: Vec<TraceRow>,
    pub config: RunConfig,
}

/// Results of one config, in seed order.
#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub dir: PathBuf,
    pub results: Vec<RunResult>,
}

impl RunReport {
    pub fn aborted(&self) -> usize {
        self.results.iter().filter(|r| r.status == RunStatus::Aborted).count()
    }

    /// 0 when every seed completed, 3 otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.aborted() == 0 {
            0
        } else {
            3
        }
    }
}

/// Worker count from the environment, at least 1.
pub fn workers_from_env() -> usize {
    std::env::var(WORKERS_ENV).ok().and_then(|v| v.trim().parse().ok()).unwrap_or(1).max(1)
}

fn group_dir(resolved: &Resolved) -> PathBuf {
    let c = &resolved.echo;
    c.output_dir.join(format!("{}-{}", c.problem, c.activation.name()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::io(path.display(), e))?;
    fs::write(path, text + "\n").map_err(|e| CliError::io(path.display(), e))
}

fn write_trace(path: &Path, trace: &[TraceRow]) -> Result<(), CliError> {
    let io = |e: csv::Error| CliError::io(path.display(), e);
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path).map_err(io)?;
    w.write_record(TRACE_HEADER).map_err(io)?;
    for row in trace {
        w.serialize(row).map_err(io)?;
    }
    w.flush().map_err(|e| CliError::io(path.display(), e))
}

fn write_artifacts(dir: &Path, result: &RunResult, params: &ParamSet) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir.display(), e))?;
    write_trace(&dir.join("trace.csv"), &result.trace)?;
    write_json(&dir.join("checkpoint.json"), &params.to_checkpoint())?;
    write_json(&dir.join("result.json"), result)
}

/// Train one seed and write its artifacts under `dir`.
pub fn run_seed(resolved: &Resolved, seed: u64, dir: &Path) -> Result<RunResult, CliError> {
    let plan = resolved.plan(seed);
    let spec = &resolved.spec;
    let mut result = RunResult {
        problem: spec.name,
        activation: resolved.echo.activation,
        beta_init: resolved.echo.beta_init,
        seed,
        status: RunStatus::Completed,
        error: None,
        epochs_run: 0,
        final_loss: None,
        metrics: None,
        kappa: None,
        wall_time_s: 0.0,
        events: Vec::new(),
        trace: Vec::new(),
        config: resolved.echo.clone(),
    };
    let start = Instant::now();
    let params = match train(spec, &plan) {
        Ok(out) => {
            result.metrics = Some(test_metrics(spec, &plan.net, &out.params));
            result.final_loss = Some(FinalLoss::from(&out.final_loss));
            result.trace = out.trace;
            result.events = out.events;
            out.params
        }
        Err(abort) => {
            log::warn!("{} {} seed {seed} aborted at epoch {}: {}", spec.name, plan.net.activation.tag(), abort.epoch, abort.error);
            result.status = RunStatus::Aborted;
            result.error = Some(format!("epoch {}: {}", abort.epoch, abort.error));
            result.trace = abort.trace;
            result.events = abort.events;
            abort.params
        }
    };
    result.wall_time_s = start.elapsed().as_secs_f64();
    result.epochs_run = result.trace.len();
    result.kappa = params.extra("kappa");
    write_artifacts(dir, &result, &params)?;
    match (&result.metrics, result.kappa) {
        (Some(m), kappa) => log::info!(
            "{} {} seed {seed}: mse {:.3e} re {} kappa {} ({:.1}s)",
            spec.name,
            result.activation,
            m.mse,
            m.re.map_or("-".into(), |r| format!("{r:.3e}")),
            kappa.map_or("-".into(), |k| format!("{k:.4}")),
            result.wall_time_s
        ),
        _ => {}
    }
    Ok(result)
}

/// Run every seed of a resolved config with up to `workers` threads.
pub fn run_resolved(resolved: &Resolved, workers: usize) -> Result<RunReport, CliError> {
    let dir = group_dir(resolved);
    fs::create_dir_all(&dir).map_err(|e| CliError::io(dir.display(), e))?;
    write_json(&dir.join("config.json"), &resolved.echo)?;
    let seeds = &resolved.echo.seeds;
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<RunResult, CliError>>>> = Mutex::new((0..seeds.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers.clamp(1, seeds.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(&seed) = seeds.get(i) else { break };
                let out = run_seed(resolved, seed, &dir.join(format!("seed-{seed}")));
                slots.lock().expect("no worker panicked")[i] = Some(out);
            });
        }
    });
    let results = slots
        .into_inner()
        .expect("no worker panicked")
        .into_iter()
        .map(|r| r.expect("every seed ran"))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(RunReport { dir, results })
}

/// Load, resolve and run a config file.
pub fn run(config_path: &Path, workers: usize) -> Result<RunReport, CliError> {
    let resolved = RunConfig::from_path(config_path)?.resolve()?;
    run_resolved(&resolved, workers)
}

/// The ten initial scales of the sensitivity sweep.
pub fn sweep_values() -> Vec<f64> {
    linspace(0.25, 1.15, 10)
}

/// Run the config once per initial scale in [`sweep_values`], each under its
/// own `beta-<value>` directory, then summarise the whole sweep.
pub fn sweep_beta(config_path: &Path, workers: usize) -> Result<(Vec<RunReport>, Vec<SummaryRow>), CliError> {
    let base = RunConfig::from_path(config_path)?;
    if base.activation == ActivationTag::Tanh {
        return Err(CliError::Config("tanh has no trainable scale to sweep".into()));
    }
    let mut runs = Vec::new();
    for beta in sweep_values() {
        let mut cfg = base.clone();
        cfg.beta_init = Some(beta);
        cfg.output_dir = base.output_dir.join(format!("beta-{beta:.2}"));
        runs.push(cfg.resolve()?);
    }
    let reports = runs.iter().map(|r| run_resolved(r, workers)).collect::<Result<Vec<_>, _>>()?;
    let summary = aggregate(&base.output_dir)?;
    Ok((reports, summary))
}

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::CliError;
use crate::net::{ActivationTag, NetConfig};
use crate::optim::{AdamConfig, LbfgsConfig};
use crate::pinn::{problem, OptimizerChoice, ProblemName, ProblemSpec, TrainPlan};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// Small networks and short runs that finish in minutes on one core.
    #[default]
    Desk,
    /// Full-size networks and sample counts.
    Paper,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LbfgsOptions {
    /// Inner L-BFGS iterations per epoch, all on the epoch's sample.
    pub iterations_per_epoch: usize,
    pub memory: usize,
    pub c1: f64,
    pub c2: f64,
    pub max_evals: usize,
    pub initial_step: f64,
    pub fallback_step: f64,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        let d = LbfgsConfig::default();
        LbfgsOptions {
            iterations_per_epoch: 20,
            memory: d.memory,
            c1: d.c1,
            c2: d.c2,
            max_evals: d.max_evals,
            initial_step: d.initial_step,
            fallback_step: d.fallback_step,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OptimizerConfig {
    Adam(AdamConfig),
    Lbfgs(LbfgsOptions),
}

impl OptimizerConfig {
    pub fn choice(self) -> OptimizerChoice {
        match self {
            OptimizerConfig::Adam(cfg) => OptimizerChoice::Adam(cfg),
            OptimizerConfig::Lbfgs(o) => OptimizerChoice::Lbfgs {
                config: LbfgsConfig {
                    memory: o.memory,
                    c1: o.c1,
                    c2: o.c2,
                    max_evals: o.max_evals,
                    initial_step: o.initial_step,
                    fallback_step: o.fallback_step,
                    ..LbfgsConfig::default()
                },
                iterations_per_epoch: o.iterations_per_epoch,
            },
        }
    }
}

/// One experiment: a problem, an activation and a list of seeds. Fields left
/// out are filled from the preset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemName,
    pub activation: ActivationTag,
    #[serde(default)]
    pub preset: Preset,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta_init: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden_layers: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimizer: Option<OptimizerConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_f: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_u: Option<usize>,
    /// Weight of the `γ·Σβ²` regularizer; off by default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    pub seeds: Vec<u64>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

/// Sizes a preset assigns to a problem.
struct Defaults {
    hidden_layers: usize,
    width: usize,
    optimizer: OptimizerConfig,
    epochs: usize,
    n_f: usize,
    n_u: usize,
}

fn defaults(preset: Preset, spec: &ProblemSpec) -> Defaults {
    use ProblemName::*;
    let adam = OptimizerConfig::Adam(AdamConfig::with_lr(0.0008));
    let lbfgs = OptimizerConfig::Lbfgs(LbfgsOptions::default());
    let (n_f, n_u) = (spec.n_f, spec.n_u());
    let d = |hidden_layers, width, optimizer, epochs, n_f, n_u| Defaults { hidden_layers, width, optimizer, epochs, n_f, n_u };
    match (preset, spec.name) {
        (Preset::Desk, SmoothRegression | DiscontinuousRegression) => d(4, 20, adam, 3000, n_f, n_u),
        (Preset::Desk, OdeSecondOrder | OdeLowFrequency) => d(4, 30, lbfgs, 300, n_f / 5, n_u),
        (Preset::Desk, KleinGordon) => d(5, 30, lbfgs, 300, 2000, n_u),
        (Preset::Desk, InverseHeat) => d(4, 30, lbfgs, 300, 2000, 500),
        (Preset::Paper, SmoothRegression) => d(4, 50, adam, 10_000, n_f, n_u),
        (Preset::Paper, DiscontinuousRegression) => d(4, 50, adam, 20_000, n_f, n_u),
        (Preset::Paper, OdeSecondOrder | OdeLowFrequency | KleinGordon) => d(9, 50, lbfgs, 1000, n_f, n_u),
        (Preset::Paper, InverseHeat) => d(10, 50, lbfgs, 1000, n_f, n_u),
    }
}

/// A config with every field filled in and checked.
#[derive(Debug, Clone, PartialEq)]
pub struct Resolved {
    /// The config with all defaults written out; parsing and resolving it
    /// again gives the same result.
    pub echo: RunConfig,
    pub spec: ProblemSpec,
}

impl Resolved {
    pub fn plan(&self, seed: u64) -> TrainPlan {
        let c = &self.echo;
        let kind = c.activation.with_beta(c.beta_init.unwrap_or(0.0));
        TrainPlan {
            net: NetConfig::uniform(self.spec.input_dim, c.hidden_layers.unwrap(), c.width.unwrap(), 1, kind, seed),
            optimizer: c.optimizer.unwrap().choice(),
            epochs: c.epochs.unwrap(),
            seed,
            gamma: c.gamma.unwrap_or(0.0),
        }
    }
}

impl RunConfig {
    pub fn from_path(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path.display(), e))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn resolve(&self) -> Result<Resolved, CliError> {
        let bad = |msg: String| Err(CliError::Config(msg));
        if self.seeds.is_empty() {
            return bad("seeds must not be empty".into());
        }
        let base = problem(self.problem);
        let d = defaults(self.preset, &base);
        let mut echo = self.clone();
        echo.hidden_layers.get_or_insert(d.hidden_layers);
        echo.width.get_or_insert(d.width);
        echo.optimizer.get_or_insert(d.optimizer);
        echo.epochs.get_or_insert(d.epochs);
        echo.gamma.get_or_insert(0.0);
        if self.problem.is_regression() {
            if self.n_f.is_some() {
                return bad(format!("{} has no residual points; drop n_f", self.problem));
            }
        } else {
            echo.n_f.get_or_insert(d.n_f);
        }
        echo.n_u.get_or_insert(d.n_u);
        match self.activation {
            ActivationTag::Tanh => {
                if self.beta_init.is_some() {
                    return bad("tanh has no trainable scale; drop beta_init".into());
                }
            }
            _ => {
                let default_beta = if self.problem == ProblemName::KleinGordon { 0.25 } else { 1.0 };
                echo.beta_init.get_or_insert(default_beta);
            }
        }

        if echo.hidden_layers == Some(0) || echo.width == Some(0) {
            return bad("hidden_layers and width must be at least 1".into());
        }
        if let Some(b) = echo.beta_init {
            if !b.is_finite() {
                return bad(format!("beta_init must be finite, got {b}"));
            }
        }
        let gamma = echo.gamma.unwrap();
        if !(gamma >= 0.0 && gamma.is_finite()) {
            return bad(format!("gamma must be a non-negative number, got {gamma}"));
        }
        match echo.optimizer.unwrap() {
            OptimizerConfig::Adam(a) => {
                if !(a.lr > 0.0 && a.lr.is_finite()) || !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.eps > 0.0) {
                    return bad("adam needs lr > 0, beta1 and beta2 in [0, 1), eps > 0".into());
                }
            }
            OptimizerConfig::Lbfgs(l) => {
                if l.iterations_per_epoch == 0 || l.max_evals == 0 || !(l.initial_step > 0.0) || !(0.0 < l.c1 && l.c1 < l.c2 && l.c2 < 1.0) {
                    return bad("lbfgs needs iterations_per_epoch >= 1, max_evals >= 1, initial_step > 0 and 0 < c1 < c2 < 1".into());
                }
            }
        }

        let mut spec = base.with_n_u(echo.n_u.unwrap());
        if let Some(n_f) = echo.n_f {
            spec = spec.with_n_f(n_f);
        }
        if let crate::pinn::DataSource::Fixed(points) = &spec.data {
            if echo.n_u != Some(points.len()) {
                return bad(format!("{} has {} fixed data point(s); n_u cannot change that", self.problem, points.len()));
            }
        }
        spec.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(Resolved { echo, spec })
    }
}

use serde::{Deserialize, Serialize};

use crate::analysis::{compute_metrics, Metrics};
use crate::autodiff::AutodiffError;
use crate::net::{eval, init_params, Layout, NetConfig, NetError, ParamSet};
use crate::optim::{adam_step, lbfgs_step, AdamConfig, AdamState, LbfgsConfig, LbfgsState};

use super::loss::{LossReport, LossWorkspace, SampleSet};
use super::problem::ProblemSpec;
use super::sampling::sample_set;
use super::PinnError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerChoice {
    /// One Adam step per epoch.
    Adam(AdamConfig),
    /// Up to `iterations_per_epoch` L-BFGS iterations per epoch, all on the
    /// epoch's sample.
    Lbfgs { config: LbfgsConfig, iterations_per_epoch: usize },
}

impl OptimizerChoice {
    pub fn lbfgs(iterations_per_epoch: usize) -> Self {
        OptimizerChoice::Lbfgs { config: LbfgsConfig::default(), iterations_per_epoch }
    }
}

/// Everything `train` needs beyond the problem itself.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainPlan {
    pub net: NetConfig,
    pub optimizer: OptimizerChoice,
    pub epochs: usize,
    /// Seeds collocation and data sampling.
    pub seed: u64,
    /// Weight of the `γ·Σβ²` regularizer; zero disables it.
    pub gamma: f64,
}

/// Loss state at the start of one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub epoch: usize,
    pub loss_total: f64,
    pub loss_residual: f64,
    pub loss_data: f64,
    pub beta_tracked: Option<f64>,
    pub kappa: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub epoch: usize,
    pub kind: String,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: ParamSet,
    pub trace: Vec<TraceRow>,
    /// Loss at the final parameters on the last epoch's sample.
    pub final_loss: LossReport,
    pub events: Vec<Event>,
}

/// A failed run, with everything recorded up to the failure.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainAbort {
    pub error: PinnError,
    pub epoch: usize,
    pub params: ParamSet,
    pub trace: Vec<TraceRow>,
    pub events: Vec<Event>,
}

/// Seeded network parameters plus the problem's extra coefficients at their
/// initial values.
pub fn init_for_problem(spec: &ProblemSpec, net: &NetConfig) -> Result<ParamSet, PinnError> {
    if net.input_dim != spec.input_dim || net.output_dim != 1 {
        return Err(PinnError::Net(NetError::Config(format!(
            "{} needs a {}-input, 1-output network",
            spec.name, spec.input_dim
        ))));
    }
    let mut params = init_params(net)?;
    for extra in &spec.extras {
        params = params.with_extra(&extra.name, extra.initial);
    }
    Ok(params)
}

/// MSE and RE of the trained network against the reference on the test grid.
pub fn test_metrics(spec: &ProblemSpec, net: &NetConfig, params: &ParamSet) -> Metrics {
    let grid = spec.test_grid();
    let pred: Vec<f64> = grid
        .iter()
        .map(|p| eval(params, net.activation, &p[..spec.input_dim])[0])
        .collect();
    let reference: Vec<f64> = grid.iter().map(|p| spec.reference(p)).collect();
    compute_metrics(&pred, &reference).expect("grids have equal length")
}

fn is_overflow(err: &PinnError) -> bool {
    matches!(
        err,
        PinnError::NonFinite { .. } | PinnError::Net(NetError::NonFinite { .. }) | PinnError::Autodiff(AutodiffError::NonFinite(_))
    )
}

struct Objective<'a> {
    spec: &'a ProblemSpec,
    net: &'a NetConfig,
    layout: Layout,
    gamma: f64,
    workspace: LossWorkspace,
}

impl Objective<'_> {
    fn at(&mut self, x: &[f64], points: &SampleSet) -> Result<LossReport, PinnError> {
        let params = ParamSet::from_flat(self.layout.clone(), x.to_vec())?;
        let mut report = self.workspace.evaluate(self.spec, self.net, &params, points)?;
        report.add_beta_regularizer(&params, self.gamma);
        Ok(report)
    }
}

fn row(epoch: usize, report: &LossReport, params: &ParamSet) -> TraceRow {
    TraceRow {
        epoch,
        loss_total: report.total,
        loss_residual: report.mse_f,
        loss_data: report.mse_u,
        beta_tracked: params.layout().beta(0, 0).map(|i| params.flat()[i]),
        kappa: params.extra("kappa"),
    }
}

/// Fit the network to the problem, one optimizer step per epoch.
///
/// Collocation points are redrawn each epoch when the problem asks for it;
/// data points are drawn once.
pub fn train(spec: &ProblemSpec, plan: &TrainPlan) -> Result<TrainOutcome, Box<TrainAbort>> {
    let params = match spec.validate().and_then(|_| init_for_problem(spec, &plan.net)) {
        Ok(p) => p,
        Err(error) => {
            return Err(Box::new(TrainAbort {
                error,
                epoch: 0,
                params: ParamSet::zeros(plan.net.layout()),
                trace: Vec::new(),
                events: Vec::new(),
            }))
        }
    };
    let mut run = Run {
        objective: Objective {
            spec,
            net: &plan.net,
            layout: params.layout().clone(),
            gamma: plan.gamma,
            workspace: LossWorkspace::new(spec.input_dim),
        },
        params,
        trace: Vec::with_capacity(plan.epochs),
        events: Vec::new(),
    };
    let outcome = match plan.optimizer {
        OptimizerChoice::Adam(cfg) => run.adam(plan, cfg),
        OptimizerChoice::Lbfgs { config, iterations_per_epoch } => run.lbfgs(plan, config, iterations_per_epoch),
    };
    match outcome {
        Ok(()) => {
            let last = sample_set(spec, plan.seed, plan.epochs.saturating_sub(1) as u64);
            match run.objective.at(run.params.flat(), &last) {
                Ok(final_loss) => Ok(TrainOutcome { params: run.params, trace: run.trace, final_loss, events: run.events }),
                Err(error) => Err(run.abort(error, plan.epochs)),
            }
        }
        Err((epoch, error)) => Err(run.abort(error, epoch)),
    }
}

struct Run<'a> {
    objective: Objective<'a>,
    params: ParamSet,
    trace: Vec<TraceRow>,
    events: Vec<Event>,
}

impl Run<'_> {
    fn abort(self, error: PinnError, epoch: usize) -> Box<TrainAbort> {
        Box::new(TrainAbort { error, epoch, params: self.params, trace: self.trace, events: self.events })
    }

    fn points(&self, plan: &TrainPlan, epoch: usize, previous: Option<SampleSet>) -> SampleSet {
        match previous {
            Some(p) if !self.objective.spec.resample => p,
            _ => sample_set(self.objective.spec, plan.seed, epoch as u64),
        }
    }

    fn adam(&mut self, plan: &TrainPlan, cfg: AdamConfig) -> Result<(), (usize, PinnError)> {
        let mut state = AdamState::new(cfg, self.params.len());
        let mut points = None;
        for epoch in 0..plan.epochs {
            let current = self.points(plan, epoch, points.take());
            let report = self.objective.at(self.params.flat(), &current).map_err(|e| (epoch, e))?;
            self.trace.push(row(epoch, &report, &self.params));
            adam_step(self.params.flat_mut(), &report.gradient, &mut state).map_err(|e| (epoch, e.into()))?;
            points = Some(current);
        }
        Ok(())
    }

    fn lbfgs(&mut self, plan: &TrainPlan, cfg: LbfgsConfig, iterations: usize) -> Result<(), (usize, PinnError)> {
        let mut state = LbfgsState::new(cfg);
        let mut points: Option<SampleSet> = None;
        // report at the current parameters for the current sample
        let mut current: Option<LossReport> = None;
        for epoch in 0..plan.epochs {
            let resampled = points.is_none() || self.objective.spec.resample;
            let sample = self.points(plan, epoch, points.take());
            if resampled {
                current = None;
            }
            let report = match current.take() {
                Some(r) => r,
                None => {
                    let r = self.objective.at(self.params.flat(), &sample).map_err(|e| (epoch, e))?;
                    state.prime(self.params.flat(), r.total, r.gradient.clone());
                    r
                }
            };
            self.trace.push(row(epoch, &report, &self.params));

            let mut seen: Vec<(Vec<f64>, LossReport)> = vec![(self.params.flatten(), report)];
            for _ in 0..iterations {
                let objective = &mut self.objective;
                let step = lbfgs_step(
                    self.params.flat_mut(),
                    |x: &[f64]| -> Result<(f64, Vec<f64>), PinnError> {
                        match objective.at(x, &sample) {
                            Ok(r) => {
                                let out = (r.total, r.gradient.clone());
                                seen.push((x.to_vec(), LossReport { gradient: Vec::new(), ..r }));
                                Ok(out)
                            }
                            // an overflowing trial point is just a very bad one
                            Err(e) if is_overflow(&e) => Ok((f64::INFINITY, vec![0.0; x.len()])),
                            Err(e) => Err(e),
                        }
                    },
                    &mut state,
                )
                .map_err(|e| (epoch, e))?;
                if step.fallback {
                    self.events.push(Event {
                        epoch,
                        kind: "lbfgs_fallback".into(),
                        detail: format!(
                            "line search failed; gradient step {}",
                            if step.step_length > 0.0 { "accepted" } else { "rejected" }
                        ),
                    });
                }
                if step.converged || !(step.loss_after < step.loss_before) {
                    break;
                }
            }
            current = seen.into_iter().rev().find(|(x, _)| x.as_slice() == self.params.flat()).map(|(_, r)| r);
            points = Some(sample);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::ActivationKind;
    use crate::pinn::problem::{problem, ProblemName};

    fn plan(spec: &ProblemSpec, optimizer: OptimizerChoice, epochs: usize) -> TrainPlan {
        TrainPlan {
            net: NetConfig::uniform(spec.input_dim, 2, 6, 1, ActivationKind::Stan { beta_init: 1.0 }, 3),
            optimizer,
            epochs,
            seed: 3,
            gamma: 0.0,
        }
    }

    #[test]
    fn zero_epochs_returns_init() {
        let spec = problem(ProblemName::OdeSecondOrder).with_n_f(10);
        let p = plan(&spec, OptimizerChoice::lbfgs(1), 0);
        let out = train(&spec, &p).unwrap();
        assert!(out.trace.is_empty());
        assert_eq!(out.params, init_for_problem(&spec, &p.net).unwrap());
    }

    #[test]
    fn lbfgs_loss_decreases_without_resampling() {
        let mut spec = problem(ProblemName::OdeSecondOrder).with_n_f(30);
        spec.resample = false;
        let out = train(&spec, &plan(&spec, OptimizerChoice::lbfgs(1), 15)).unwrap();
        assert_eq!(out.trace.len(), 15);
        for pair in out.trace.windows(2) {
            assert!(pair[1].loss_total <= pair[0].loss_total);
        }
        assert!(out.final_loss.total <= out.trace[14].loss_total);
        assert!(out.trace.iter().all(|r| r.beta_tracked.is_some() && r.kappa.is_none()));
    }

    #[test]
    fn adam_reduces_regression_loss() {
        let spec = problem(ProblemName::SmoothRegression).with_n_u(50);
        let out = train(&spec, &plan(&spec, OptimizerChoice::Adam(AdamConfig::with_lr(0.01)), 100)).unwrap();
        assert!(out.final_loss.total < out.trace[0].loss_total);
        assert_eq!(out.final_loss.mse_f, 0.0);
    }

    #[test]
    fn heat_tracks_kappa() {
        let spec = problem(ProblemName::InverseHeat).with_n_f(20).with_n_u(20);
        let out = train(&spec, &plan(&spec, OptimizerChoice::lbfgs(1), 3)).unwrap();
        assert_eq!(out.trace[0].kappa, Some(0.0));
        assert!(out.params.extra("kappa").is_some());
    }

    #[test]
    fn training_is_deterministic() {
        let spec = problem(ProblemName::OdeSecondOrder).with_n_f(25);
        let p = plan(&spec, OptimizerChoice::lbfgs(1), 8);
        let (a, b) = (train(&spec, &p).unwrap(), train(&spec, &p).unwrap());
        assert_eq!(a.params, b.params);
        assert_eq!(a.trace, b.trace);
    }

    #[test]
    fn mismatched_network_aborts() {
        let spec = problem(ProblemName::KleinGordon);
        let mut p = plan(&spec, OptimizerChoice::lbfgs(1), 2);
        p.net.input_dim = 1;
        let abort = train(&spec, &p).unwrap_err();
        assert!(abort.trace.is_empty());
    }

    #[test]
    fn overflow_at_start_aborts_with_trace() {
        let spec = problem(ProblemName::OdeSecondOrder).with_n_f(10);
        let p = plan(&spec, OptimizerChoice::Adam(AdamConfig::with_lr(1e300)), 5);
        let abort = train(&spec, &p).unwrap_err();
        assert!(abort.epoch >= 1);
        assert_eq!(abort.trace.len(), abort.epoch);
    }
}

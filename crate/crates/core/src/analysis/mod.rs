//! Error metrics, the activation saturation probe, the scale-invariance
//! certificate and the finite-difference gradient audit.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{DiffValue, Tape};
use crate::net::{activate, ActivationKind, ActivationTag, NetConfig, ParamSet};
use crate::pinn::{evaluate_loss, evaluate_loss_with, LossReport, PinnError, ProblemSpec, SampleSet, Surrogate};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("prediction has {pred} values, reference has {reference}")]
    LengthMismatch { pred: usize, reference: usize },
    #[error("probe point must be at least 10, got {0}")]
    ProbeTooClose(f64),
    #[error("the certificate needs per-neuron scales; {0} has none")]
    UnsupportedActivation(ActivationTag),
    #[error("gamma must be positive, got {0}")]
    Gamma(f64),
    #[error("asked to audit {asked} coordinates of {available}")]
    TooManyCoordinates { asked: usize, available: usize },
    #[error(transparent)]
    Pinn(#[from] PinnError),
}

/// Test-set error of one run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mse: f64,
    /// `‖pred − ref‖₂ / ‖ref‖₂`; `None` when the reference is identically zero.
    pub re: Option<f64>,
}

pub fn compute_metrics(pred: &[f64], reference: &[f64]) -> Result<Metrics, AnalysisError> {
    if pred.len() != reference.len() {
        return Err(AnalysisError::LengthMismatch { pred: pred.len(), reference: reference.len() });
    }
    let err_sq: f64 = pred.iter().zip(reference).map(|(p, r)| (p - r) * (p - r)).sum();
    let ref_sq: f64 = reference.iter().map(|r| r * r).sum();
    let mse = if pred.is_empty() { 0.0 } else { err_sq / pred.len() as f64 };
    let re = (ref_sq > 0.0).then(|| (err_sq / ref_sq).sqrt());
    Ok(Metrics { mse, re })
}

/// Per-seed metrics and their means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub per_seed: Vec<Metrics>,
    pub mean_mse: f64,
    /// Mean RE, `None` if any seed's RE is undefined.
    pub mean_re: Option<f64>,
}

impl MetricsRecord {
    pub fn from_seeds(per_seed: Vec<Metrics>) -> Self {
        let n = per_seed.len().max(1) as f64;
        let mean_mse = per_seed.iter().map(|m| m.mse).sum::<f64>() / n;
        let mean_re = per_seed
            .iter()
            .map(|m| m.re)
            .sum::<Option<f64>>()
            .map(|s| s / n);
        MetricsRecord { per_seed, mean_mse, mean_re }
    }
}

/// Activation slope at `-x` and `+x`, via the jet algebra.
pub fn saturation_probe(kind: ActivationKind, beta: f64, x: f64) -> Result<(f64, f64), AnalysisError> {
    if !(x >= 10.0) {
        return Err(AnalysisError::ProbeTooClose(x));
    }
    let slope = |at: f64| {
        let mut tape = Tape::new(0);
        let xv = tape.lift_input(at, 1.0).expect("finite probe point");
        activate(&mut tape, kind, xv, DiffValue::constant(beta)).d1
    };
    Ok((slope(-x), slope(x)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeuronResidual {
    pub layer: usize,
    pub neuron: usize,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationarityCertificate {
    pub gamma: f64,
    pub residuals: Vec<NeuronResidual>,
    pub max_abs: f64,
}

/// For each hidden neuron with incoming weights `w`, bias `b` and scale `β`:
/// `r = w·∂J_γ/∂w + b·∂J_γ/∂b + 2γβ² − β·∂J_γ/∂β` with `J_γ = J + γ‖B‖²`.
///
/// When the activation depends on its input only through `β·z`, the loss is
/// invariant under `(w, b, β) → (c·w, c·b, β/c)` and `r` vanishes identically.
pub fn stationarity_certificate(
    spec: &ProblemSpec,
    net: &NetConfig,
    params: &ParamSet,
    points: &SampleSet,
    gamma: f64,
) -> Result<StationarityCertificate, AnalysisError> {
    if !net.activation.has_scales() {
        return Err(AnalysisError::UnsupportedActivation(net.activation.tag()));
    }
    if !(gamma > 0.0) {
        return Err(AnalysisError::Gamma(gamma));
    }
    let mut report = evaluate_loss(spec, net, params, points)?;
    report.add_beta_regularizer(params, gamma);
    let g = &report.gradient;
    let v = params.flat();
    let layout = params.layout();
    let dims = layout.dims();
    let mut residuals = Vec::new();
    for k in 0..layout.depth() - 1 {
        for i in 0..dims[k + 1] {
            let mut r = 0.0;
            for j in 0..dims[k] {
                let at = layout.weight(k, i, j);
                r += v[at] * g[at];
            }
            let b = layout.bias(k, i);
            r += v[b] * g[b];
            let s = layout.beta(k, i).expect("scaled activation");
            r += 2.0 * gamma * v[s] * v[s] - v[s] * g[s];
            residuals.push(NeuronResidual { layer: k, neuron: i, residual: r });
        }
    }
    let max_abs = residuals.iter().fold(0.0f64, |m, r| m.max(r.residual.abs()));
    Ok(StationarityCertificate { gamma, residuals, max_abs })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FdAudit {
    pub step: f64,
    pub indices: Vec<usize>,
    /// `|ad − fd| / max(|ad|, |fd|, 1)`, largest over the audited coordinates.
    pub max_rel_error: f64,
    pub max_abs_error: f64,
}

/// Compare the training loss gradient with central differences on
/// `n_params` randomly chosen parameter coordinates.
pub fn fd_audit(
    spec: &ProblemSpec,
    net: &NetConfig,
    params: &ParamSet,
    points: &SampleSet,
    n_params: usize,
    step: f64,
    seed: u64,
) -> Result<FdAudit, AnalysisError> {
    audit(params, n_params, step, seed, |p| evaluate_loss(spec, net, p, points))
}

/// [`fd_audit`] for any surrogate, on a caller-supplied tape.
#[allow(clippy::too_many_arguments)]
pub fn fd_audit_with(
    spec: &ProblemSpec,
    surrogate: &dyn Surrogate,
    params: &ParamSet,
    points: &SampleSet,
    n_params: usize,
    step: f64,
    seed: u64,
    tape: &mut Tape,
) -> Result<FdAudit, AnalysisError> {
    audit(params, n_params, step, seed, |p| evaluate_loss_with(spec, surrogate, p, points, tape))
}

fn audit<F>(params: &ParamSet, n_params: usize, step: f64, seed: u64, mut loss: F) -> Result<FdAudit, AnalysisError>
where
    F: FnMut(&ParamSet) -> Result<LossReport, PinnError>,
{
    if n_params > params.len() {
        return Err(AnalysisError::TooManyCoordinates { asked: n_params, available: params.len() });
    }
    let ad = loss(params)?.gradient;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut indices = sample(&mut rng, params.len(), n_params).into_vec();
    indices.sort_unstable();
    let mut probe = params.clone();
    let (mut max_rel, mut max_abs) = (0.0f64, 0.0f64);
    for &i in &indices {
        let x = params.flat()[i];
        probe.flat_mut()[i] = x + step;
        let up = loss(&probe)?.total;
        probe.flat_mut()[i] = x - step;
        let down = loss(&probe)?.total;
        probe.flat_mut()[i] = x;
        let fd = (up - down) / (2.0 * step);
        let abs = (fd - ad[i]).abs();
        max_abs = max_abs.max(abs);
        max_rel = max_rel.max(abs / fd.abs().max(ad[i].abs()).max(1.0));
    }
    Ok(FdAudit { step, indices, max_rel_error: max_rel, max_abs_error: max_abs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::init_params;
    use crate::pinn::{problem, sample_set, NetSurrogate, ProblemName};
    use proptest::prelude::*;

    fn small_ode(kind: ActivationKind, seed: u64) -> (ProblemSpec, NetConfig, ParamSet, SampleSet) {
        let spec = problem(ProblemName::OdeSecondOrder).with_n_f(20);
        let net = NetConfig::uniform(1, 2, 5, 1, kind, seed);
        let params = init_params(&net).unwrap();
        let points = sample_set(&spec, seed, 0);
        (spec, net, params, points)
    }

    #[test]
    fn metrics_examples() {
        let r = [1.0, -2.0, 3.0];
        assert_eq!(compute_metrics(&r, &r).unwrap(), Metrics { mse: 0.0, re: Some(0.0) });
        let doubled: Vec<f64> = r.iter().map(|x| 2.0 * x).collect();
        assert_eq!(compute_metrics(&doubled, &r).unwrap().re, Some(1.0));
        assert_eq!(compute_metrics(&[1.0], &[0.0]).unwrap().re, None);
        assert!(compute_metrics(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn record_means() {
        let seeds = vec![Metrics { mse: 1.0, re: Some(0.1) }, Metrics { mse: 3.0, re: Some(0.3) }];
        let rec = MetricsRecord::from_seeds(seeds);
        assert_eq!(rec.mean_mse, 2.0);
        assert!((rec.mean_re.unwrap() - 0.2).abs() < 1e-15);
        let flagged = MetricsRecord::from_seeds(vec![Metrics { mse: 1.0, re: None }]);
        assert_eq!(flagged.mean_re, None);
    }

    #[test]
    fn probe_limits() {
        for beta in [0.5, 1.0, 2.0] {
            let (l, r) = saturation_probe(ActivationKind::Stan { beta_init: beta }, beta, 25.0).unwrap();
            assert!((l + beta).abs() < 1e-6 && (r - beta).abs() < 1e-6);
        }
        let (l, r) = saturation_probe(ActivationKind::Tanh, 0.0, 25.0).unwrap();
        assert!(l.abs() < 1e-6 && r.abs() < 1e-6);
        assert!(saturation_probe(ActivationKind::Tanh, 0.0, 5.0).is_err());
    }

    #[test]
    fn certificate_vanishes_for_scaled_tanh() {
        let (spec, net, params, points) = small_ode(ActivationKind::NLaaf { beta_init: 0.8 }, 4);
        let cert = stationarity_certificate(&spec, &net, &params, &points, 1e-3).unwrap();
        assert_eq!(cert.residuals.len(), 10);
        assert!(cert.max_abs < 1e-9, "{}", cert.max_abs);
    }

    #[test]
    fn certificate_with_zero_scales_is_zero() {
        let (spec, net, mut params, points) = small_ode(ActivationKind::NLaaf { beta_init: 0.0 }, 1);
        for k in 0..2 {
            for i in 0..5 {
                let at = params.layout().beta(k, i).unwrap();
                params.flat_mut()[at] = 0.0;
            }
        }
        let cert = stationarity_certificate(&spec, &net, &params, &points, 1e-3).unwrap();
        assert!(cert.residuals.iter().all(|r| r.residual.abs() < 1e-12));
    }

    #[test]
    fn certificate_rejects_tanh_and_reports_stan() {
        let (spec, net, params, points) = small_ode(ActivationKind::Tanh, 0);
        assert!(matches!(
            stationarity_certificate(&spec, &net, &params, &points, 1e-3),
            Err(AnalysisError::UnsupportedActivation(ActivationTag::Tanh))
        ));
        let (spec, net, params, points) = small_ode(ActivationKind::Stan { beta_init: 1.0 }, 0);
        let cert = stationarity_certificate(&spec, &net, &params, &points, 1e-3).unwrap();
        assert!(cert.max_abs.is_finite());
    }

    #[test]
    fn fd_audit_error_ordering() {
        let (spec, net, params, points) = small_ode(ActivationKind::Stan { beta_init: 1.0 }, 2);
        let fine = fd_audit(&spec, &net, &params, &points, 20, 1e-6, 0).unwrap();
        let coarse = fd_audit(&spec, &net, &params, &points, 20, 1e-2, 0).unwrap();
        assert!(fine.max_rel_error < 1e-5, "{}", fine.max_rel_error);
        assert!(coarse.max_rel_error > fine.max_rel_error);
        assert!(fd_audit(&spec, &net, &params, &points, 10_000, 1e-6, 0).is_err());
    }

    #[test]
    fn fd_audit_on_exact_solution() {
        let (spec, _, params, points) = small_ode(ActivationKind::Tanh, 0);
        let mut tape = Tape::new(params.len());
        let audit = fd_audit_with(&spec, &spec.exact_surrogate(), &params, &points, 5, 1e-6, 0, &mut tape).unwrap();
        assert!(audit.max_abs_error < 1e-10);
    }

    #[test]
    fn corrupted_tanh_slope_is_caught() {
        let (spec, net, params, points) = small_ode(ActivationKind::Tanh, 3);
        let mut tape = Tape::new(params.len());
        tape.set_tanh_slope_bias(0.05);
        let audit = fd_audit_with(&spec, &NetSurrogate { config: &net }, &params, &points, 20, 1e-6, 0, &mut tape).unwrap();
        assert!(audit.max_rel_error > 1e-3, "{}", audit.max_rel_error);
    }

    proptest! {
        #[test]
        fn metrics_scale_consistently(vals in proptest::collection::vec((-10.0f64..10.0, 0.5f64..10.0), 1..30), c in 0.1f64..10.0) {
            let pred: Vec<f64> = vals.iter().map(|v| v.0).collect();
            let reference: Vec<f64> = vals.iter().map(|v| v.1).collect();
            let base = compute_metrics(&pred, &reference).unwrap();
            let sp: Vec<f64> = pred.iter().map(|x| c * x).collect();
            let sr: Vec<f64> = reference.iter().map(|x| c * x).collect();
            let scaled = compute_metrics(&sp, &sr).unwrap();
            prop_assert!((scaled.re.unwrap() - base.re.unwrap()).abs() <= 1e-12 * base.re.unwrap().max(1.0));
            prop_assert!((scaled.mse - c * c * base.mse).abs() <= 1e-10 * (c * c * base.mse).max(1.0));
        }

        #[test]
        fn stan_probe_is_antisymmetric(beta in -2.0f64..2.0, x in 10.0f64..40.0) {
            let (l, r) = saturation_probe(ActivationKind::Stan { beta_init: beta }, beta, x).unwrap();
            prop_assert!((l + r).abs() < 1e-6);
        }
    }
}

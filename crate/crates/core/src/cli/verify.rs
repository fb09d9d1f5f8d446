//! The desk-scale property suite behind `stanpinn verify`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::analysis::{fd_audit, fd_audit_with, saturation_probe, stationarity_certificate};
use crate::autodiff::{Component, Tape};
use crate::net::{init_params, ActivationKind, NetConfig, ParamSet};
use crate::optim::{adam_step, lbfgs_step, AdamConfig, AdamState, LbfgsConfig, LbfgsState, OptimError};
use crate::pinn::{
    evaluate_loss_with, eval_along, init_for_problem, problem, sample_set, NetSurrogate, ProblemName, ProblemSpec,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Check { name: name.into(), passed, detail }
    }

    fn failed(name: &str, err: impl std::fmt::Display) -> Self {
        Check::new(name, false, format!("error: {err}"))
    }
}

const KINDS: [ActivationKind; 3] =
    [ActivationKind::Tanh, ActivationKind::NLaaf { beta_init: 1.0 }, ActivationKind::Stan { beta_init: 1.0 }];

const PDE_PROBLEMS: [ProblemName; 4] =
    [ProblemName::OdeSecondOrder, ProblemName::OdeLowFrequency, ProblemName::KleinGordon, ProblemName::InverseHeat];

/// A small random network on one of the PDE problems, with scales and extra
/// coefficients moved off their initial values.
fn small_case(name: ProblemName, kind: ActivationKind, seed: u64) -> (ProblemSpec, NetConfig, ParamSet) {
    let spec = problem(name).with_n_f(12).with_n_u(6);
    let net = NetConfig::uniform(spec.input_dim, 2, 5, 1, kind, seed);
    let mut params = init_for_problem(&spec, &net).expect("matching net");
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let layout = params.layout().clone();
    for k in 0..layout.depth() - 1 {
        for i in 0..layout.dims()[k + 1] {
            if let Some(at) = layout.beta(k, i) {
                params.flat_mut()[at] = rng.gen_range(0.5..1.5);
            }
        }
    }
    if let Some(at) = layout.extra("kappa") {
        params.flat_mut()[at] = rng.gen_range(0.5..1.5);
    }
    (spec, net, params)
}

/// `nets` random networks per activation, cycling through the PDE problems:
/// training-loss gradients against central differences with step 1e-6, and
/// gradients of the second input derivative against differences with step 1e-4.
pub fn gradient_check(nets: usize) -> Check {
    const NAME: &str = "gradient vs finite differences";
    let (mut worst_loss, mut worst_d2) = (0.0f64, 0.0f64);
    for kind in KINDS {
        for n in 0..nets {
            let name = PDE_PROBLEMS[n % PDE_PROBLEMS.len()];
            let (spec, net, params) = small_case(name, kind, n as u64);
            let points = sample_set(&spec, n as u64, 0);
            match fd_audit(&spec, &net, &params, &points, params.len(), 1e-6, n as u64) {
                Ok(a) => worst_loss = worst_loss.max(a.max_rel_error),
                Err(e) => return Check::failed(NAME, e),
            }
            worst_d2 = worst_d2.max(d2_audit(&spec, &net, &params, n as u64));
        }
    }
    let passed = worst_loss < 1e-5 && worst_d2 < 1e-4;
    Check::new(NAME, passed, format!("loss max rel {worst_loss:.2e} (< 1e-5), d2 max rel {worst_d2:.2e} (< 1e-4)"))
}

/// Largest relative error of `∂(d²u/dx²)/∂θ` from a reverse sweep against
/// central differences of the forward second derivative, at one random point.
fn d2_audit(spec: &ProblemSpec, net: &NetConfig, params: &ParamSet, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut point = [0.0; 2];
    for (d, &(lo, hi)) in spec.domain.iter().enumerate() {
        point[d] = rng.gen_range(lo..hi);
    }
    let surrogate = NetSurrogate { config: net };
    let mut tape = Tape::new(params.len());
    let d2 = |tape: &mut Tape, p: &ParamSet| {
        tape.reset(p.len());
        eval_along(tape, &surrogate, p, &point, spec.input_dim, Some(0)).expect("finite network output")
    };
    let u = d2(&mut tape, params);
    let ad = tape.reverse_sweep(&u, Component::D2).gradient;
    let step = 1e-4;
    let mut probe = params.clone();
    let mut worst = 0.0f64;
    for i in 0..params.len() {
        let x = params.flat()[i];
        probe.flat_mut()[i] = x + step;
        let up = d2(&mut tape, &probe).d2;
        probe.flat_mut()[i] = x - step;
        let down = d2(&mut tape, &probe).d2;
        probe.flat_mut()[i] = x;
        let fd = (up - down) / (2.0 * step);
        worst = worst.max((fd - ad[i]).abs() / fd.abs().max(ad[i].abs()).max(1.0));
    }
    worst
}

/// Slopes at ±25: Stan tends to ±β, tanh to zero.
pub fn saturation_check() -> Check {
    const NAME: &str = "saturation probe";
    let mut worst = 0.0f64;
    for beta in [0.5, 1.0, 2.0] {
        match saturation_probe(ActivationKind::Stan { beta_init: beta }, beta, 25.0) {
            Ok((l, r)) => worst = worst.max((l + beta).abs()).max((r - beta).abs()),
            Err(e) => return Check::failed(NAME, e),
        }
    }
    let tanh = match saturation_probe(ActivationKind::Tanh, 0.0, 25.0) {
        Ok((l, r)) => l.abs().max(r.abs()),
        Err(e) => return Check::failed(NAME, e),
    };
    Check::new(NAME, worst < 1e-6 && tanh < 1e-6, format!("stan |slope ∓ β| {worst:.2e}, tanh |slope| {tanh:.2e} (< 1e-6)"))
}

/// The scale-invariance residual at `points` random parameter points with
/// γ = 1e-3: asserted for N-LAAF, reported for Stan.
pub fn certificate_check(points: usize) -> Check {
    const NAME: &str = "stationarity certificate";
    let mut worst = [0.0f64; 2];
    for (slot, kind) in [ActivationKind::NLaaf { beta_init: 1.0 }, ActivationKind::Stan { beta_init: 1.0 }].into_iter().enumerate() {
        for n in 0..points {
            let (spec, net, params) = small_case(ProblemName::OdeSecondOrder, kind, 1000 + n as u64);
            let sample = sample_set(&spec, n as u64, 0);
            match stationarity_certificate(&spec, &net, &params, &sample, 1e-3) {
                Ok(c) => worst[slot] = worst[slot].max(c.max_abs),
                Err(e) => return Check::failed(NAME, e),
            }
        }
    }
    Check::new(NAME, worst[0] < 1e-9, format!("nlaaf max |r| {:.2e} (< 1e-9), stan max |r| {:.2e} (reported)", worst[0], worst[1]))
}

/// Exact solutions make the residual vanish on each problem's collocation
/// sample; the heat series is checked on 2000 points.
pub fn oracle_check() -> Check {
    const NAME: &str = "residual-zero oracles";
    let mut details = Vec::new();
    let mut passed = true;
    for name in PDE_PROBLEMS {
        let mut spec = problem(name);
        let bound = if name == ProblemName::InverseHeat {
            spec = spec.with_n_f(2000);
            1e-6
        } else {
            1e-10
        };
        let net = NetConfig::uniform(spec.input_dim, 1, 1, 1, ActivationKind::Tanh, 0);
        let mut params = init_for_problem(&spec, &net).expect("matching net");
        for extra in &spec.extras {
            params.set_extra(&extra.name, extra.truth.unwrap_or(extra.initial)).expect("declared extra");
        }
        let points = sample_set(&spec, 0, 0);
        let mut tape = Tape::new(params.len());
        match evaluate_loss_with(&spec, &spec.exact_surrogate(), &params, &points, &mut tape) {
            Ok(r) => {
                passed &= r.mse_f < bound;
                details.push(format!("{name} {:.2e} (< {bound:e})", r.mse_f));
            }
            Err(e) => return Check::failed(NAME, e),
        }
    }
    Check::new(NAME, passed, details.join(", "))
}

/// Stan with every β = 0 reproduces the tanh network on 1000 random inputs.
pub fn stan_zero_beta_check() -> Check {
    const NAME: &str = "stan with zero scale equals tanh";
    let stan = NetConfig::uniform(1, 3, 8, 1, ActivationKind::Stan { beta_init: 0.0 }, 11);
    let tanh = NetConfig { activation: ActivationKind::Tanh, ..stan.clone() };
    let (ps, pt) = match (init_params(&stan), init_params(&tanh)) {
        (Ok(a), Ok(b)) => (a, b),
        (Err(e), _) | (_, Err(e)) => return Check::failed(NAME, e),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let x = [rng.gen_range(-5.0..5.0)];
        let a = crate::net::eval(&ps, stan.activation, &x)[0];
        let b = crate::net::eval(&pt, tanh.activation, &x)[0];
        worst = worst.max((a - b).abs());
    }
    Check::new(NAME, worst == 0.0, format!("max |difference| {worst:e}"))
}

/// A deliberately biased tanh derivative on the tape must fail the audit.
pub fn mutation_check() -> Check {
    const NAME: &str = "mutated tanh derivative is caught";
    let (spec, net, params) = small_case(ProblemName::OdeSecondOrder, ActivationKind::Tanh, 3);
    let points = sample_set(&spec, 3, 0);
    let mut tape = Tape::new(params.len());
    tape.set_tanh_slope_bias(0.05);
    match fd_audit_with(&spec, &NetSurrogate { config: &net }, &params, &points, params.len(), 1e-6, 0, &mut tape) {
        Ok(a) => Check::new(NAME, a.max_rel_error > 1e-5, format!("audit max rel {:.2e} (must exceed 1e-5)", a.max_rel_error)),
        Err(e) => Check::failed(NAME, e),
    }
}

fn grad_norm(g: &[f64]) -> f64 {
    g.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// L-BFGS on a 10-dimensional quadratic and on Rosenbrock, Adam on θ².
pub fn optimizer_check() -> Check {
    const NAME: &str = "optimizer sanity";
    let diag: Vec<f64> = (1..=10).map(f64::from).collect();
    let quadratic = |x: &[f64]| -> Result<(f64, Vec<f64>), OptimError> {
        let f = 0.5 * x.iter().zip(&diag).map(|(xi, a)| a * xi * xi).sum::<f64>();
        Ok((f, x.iter().zip(&diag).map(|(xi, a)| a * xi).collect()))
    };
    let mut x: Vec<f64> = (0..10).map(|i| 1.0 - 0.15 * f64::from(i)).collect();
    let mut state = LbfgsState::new(LbfgsConfig::default());
    let mut quad_iters = 0;
    while grad_norm(&quadratic(&x).expect("finite").1) >= 1e-8 && quad_iters < 50 {
        if let Err(e) = lbfgs_step(&mut x, quadratic, &mut state) {
            return Check::failed(NAME, e);
        }
        quad_iters += 1;
    }
    let quad_norm = grad_norm(&quadratic(&x).expect("finite").1);

    let rosenbrock = |x: &[f64]| -> Result<(f64, Vec<f64>), OptimError> {
        let (a, b) = (x[0], x[1]);
        let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
        Ok((f, vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)]))
    };
    let mut x = vec![-1.2, 1.0];
    let mut state = LbfgsState::new(LbfgsConfig::default());
    let mut rosen_iters = 0;
    while rosenbrock(&x).expect("finite").0 >= 1e-8 && rosen_iters < 200 {
        if let Err(e) = lbfgs_step(&mut x, rosenbrock, &mut state) {
            return Check::failed(NAME, e);
        }
        rosen_iters += 1;
    }
    let rosen = rosenbrock(&x).expect("finite").0;

    let mut theta = [1.0];
    let mut adam = AdamState::new(AdamConfig::with_lr(0.1), 1);
    let mut adam_steps = 0;
    while theta[0] * theta[0] >= 1e-3 && adam_steps < 200 {
        let g = [2.0 * theta[0]];
        if let Err(e) = adam_step(&mut theta, &g, &mut adam) {
            return Check::failed(NAME, e);
        }
        adam_steps += 1;
    }
    let sq = theta[0] * theta[0];
    let passed = quad_norm < 1e-8 && rosen < 1e-8 && sq < 1e-3;
    Check::new(
        NAME,
        passed,
        format!(
            "quadratic |g| {quad_norm:.1e} in {quad_iters} its, rosenbrock f {rosen:.1e} in {rosen_iters} its, adam θ² {sq:.1e} in {adam_steps} steps"
        ),
    )
}

/// Every check of the suite, in order.
pub fn run_all() -> Vec<Check> {
    vec![
        gradient_check(20),
        saturation_check(),
        certificate_check(50),
        oracle_check(),
        stan_zero_beta_check(),
        mutation_check(),
        optimizer_check(),
    ]
}

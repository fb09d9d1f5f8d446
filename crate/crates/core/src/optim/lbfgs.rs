use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::OptimError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LbfgsConfig {
    /// Number of stored `(s, y)` pairs.
    pub memory: usize,
    /// Sufficient-decrease constant.
    pub c1: f64,
    /// Curvature constant.
    pub c2: f64,
    /// Objective evaluations allowed per line search.
    pub max_evals: usize,
    /// Trial step along a quasi-Newton direction.
    pub initial_step: f64,
    /// Converged when the largest gradient entry is at most this.
    pub grad_tol: f64,
    /// Step length along `-g` used when the line search fails.
    pub fallback_step: f64,
    /// Stop zooming once the bracket spans less than this in parameter space.
    pub tolerance_change: f64,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        LbfgsConfig {
            memory: 10,
            c1: 1e-4,
            c2: 0.9,
            max_evals: 25,
            initial_step: 1.0,
            grad_tol: 1e-12,
            fallback_step: 1e-4,
            tolerance_change: 1e-12,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Pair {
    s: Vec<f64>,
    y: Vec<f64>,
    rho: f64,
}

/// Optimizer memory carried between [`lbfgs_step`] calls.
#[derive(Debug, Clone, PartialEq)]
pub struct LbfgsState {
    pub config: LbfgsConfig,
    history: VecDeque<Pair>,
    cached: Option<(Vec<f64>, f64, Vec<f64>)>,
    fallbacks: usize,
}

/// What one outer iteration did.
#[derive(Debug, Clone, PartialEq)]
pub struct LbfgsStep {
    pub loss_before: f64,
    pub loss_after: f64,
    pub step_length: f64,
    pub evals: usize,
    pub converged: bool,
    /// The line search failed and a short gradient step was tried instead.
    pub fallback: bool,
}

impl LbfgsState {
    pub fn new(config: LbfgsConfig) -> Self {
        LbfgsState {
            config,
            history: VecDeque::with_capacity(config.memory),
            cached: None,
            fallbacks: 0,
        }
    }

    pub fn history_len(&self) -> usize {
        self.history.len()
    }

    /// Curvature `sᵀy` of every stored pair.
    pub fn curvatures(&self) -> impl Iterator<Item = f64> + '_ {
        self.history.iter().map(|p| 1.0 / p.rho)
    }

    pub fn fallbacks(&self) -> usize {
        self.fallbacks
    }

    /// Supply an already computed loss and gradient at `x`, so the next step
    /// does not re-evaluate it.
    pub fn prime(&mut self, x: &[f64], loss: f64, grad: Vec<f64>) {
        self.cached = Some((x.to_vec(), loss, grad));
    }

    /// Forget the cached evaluation. Call when the objective itself changes,
    /// e.g. after collocation points are resampled.
    pub fn invalidate(&mut self) {
        self.cached = None;
    }

    pub fn reset_history(&mut self) {
        self.history.clear();
    }

    fn push(&mut self, s: Vec<f64>, y: Vec<f64>) {
        let sy = dot(&s, &y);
        if !(sy > 1e-10) {
            return;
        }
        if self.history.len() == self.config.memory {
            self.history.pop_front();
        }
        if self.config.memory > 0 {
            self.history.push_back(Pair { s, y, rho: 1.0 / sy });
        }
    }

    /// Two-loop recursion: returns `-H·g`.
    fn direction(&self, g: &[f64]) -> Vec<f64> {
        let mut q = g.to_vec();
        let mut alpha = vec![0.0; self.history.len()];
        for (i, pair) in self.history.iter().enumerate().rev() {
            alpha[i] = pair.rho * dot(&pair.s, &q);
            axpy(-alpha[i], &pair.y, &mut q);
        }
        if let Some(last) = self.history.back() {
            let gamma = 1.0 / (last.rho * dot(&last.y, &last.y));
            q.iter_mut().for_each(|v| *v *= gamma);
        }
        for (i, pair) in self.history.iter().enumerate() {
            let beta = pair.rho * dot(&pair.y, &q);
            axpy(alpha[i] - beta, &pair.s, &mut q);
        }
        q.iter_mut().for_each(|v| *v = -*v);
        q
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

#[derive(Debug, Clone)]
struct Trial {
    t: f64,
    f: f64,
    g: Vec<f64>,
    gtd: f64,
}

/// Minimiser of the cubic through two points with known slopes, clamped to
/// `bounds` (defaults to the interval between the points).
fn cubic_interpolate(a: &Trial, b: &Trial, bounds: Option<(f64, f64)>) -> f64 {
    let (lo, hi) = bounds.unwrap_or(if a.t <= b.t { (a.t, b.t) } else { (b.t, a.t) });
    let d1 = a.gtd + b.gtd - 3.0 * (a.f - b.f) / (a.t - b.t);
    let d2_sq = d1 * d1 - a.gtd * b.gtd;
    if d2_sq >= 0.0 {
        let d2 = d2_sq.sqrt();
        let pos = if a.t <= b.t {
            b.t - (b.t - a.t) * ((b.gtd + d2 - d1) / (b.gtd - a.gtd + 2.0 * d2))
        } else {
            a.t - (a.t - b.t) * ((a.gtd + d2 - d1) / (a.gtd - b.gtd + 2.0 * d2))
        };
        if pos.is_finite() {
            return pos.max(lo).min(hi);
        }
    }
    0.5 * (lo + hi)
}

struct Search {
    best: Trial,
    evals: usize,
}

/// Strong-Wolfe line search: bracketing phase followed by cubic zoom.
fn strong_wolfe<E, F>(
    objective: &mut F,
    x: &[f64],
    d: &[f64],
    start: &Trial,
    t0: f64,
    cfg: &LbfgsConfig,
) -> Result<Search, E>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>), E>,
{
    let d_norm = inf_norm(d);
    let mut trial_point = vec![0.0; x.len()];
    let mut evaluate = |t: f64, evals: &mut usize| -> Result<Trial, E> {
        for ((p, xi), di) in trial_point.iter_mut().zip(x).zip(d) {
            *p = xi + t * di;
        }
        let (f, g) = objective(&trial_point)?;
        *evals += 1;
        let f = if f.is_nan() { f64::INFINITY } else { f };
        let gtd = if f.is_finite() { dot(&g, d) } else { f64::NAN };
        Ok(Trial { t, f, g, gtd })
    };
    let armijo = |tr: &Trial| tr.f <= start.f + cfg.c1 * tr.t * start.gtd;
    let curvature = |tr: &Trial| tr.gtd.abs() <= -cfg.c2 * start.gtd;

    let mut evals = 0;
    let mut new = evaluate(t0, &mut evals)?;
    let mut prev = start.clone();
    let mut done = false;
    let mut bracket: Vec<Trial>;
    let mut iter = 0;
    loop {
        if !armijo(&new) || (iter > 1 && new.f >= prev.f) {
            bracket = vec![prev, new];
            break;
        }
        if curvature(&new) {
            bracket = vec![new];
            done = true;
            break;
        }
        if new.gtd >= 0.0 {
            bracket = vec![prev, new];
            break;
        }
        if evals >= cfg.max_evals {
            bracket = vec![start.clone(), new];
            break;
        }
        let bounds = (new.t + 0.01 * (new.t - prev.t), new.t * 10.0);
        let t = cubic_interpolate(&prev, &new, Some(bounds));
        prev = new;
        new = evaluate(t, &mut evals)?;
        iter += 1;
    }

    let (mut low, mut high) = if bracket.len() == 1 || bracket[0].f <= bracket[1].f { (0, 1) } else { (1, 0) };
    let mut insufficient = false;
    while !done && evals < cfg.max_evals {
        let (a, b) = (&bracket[0], &bracket[1]);
        if (b.t - a.t).abs() * d_norm < cfg.tolerance_change {
            break;
        }
        let mut t = cubic_interpolate(a, b, None);
        let (lo, hi) = (a.t.min(b.t), a.t.max(b.t));
        let eps = 0.1 * (hi - lo);
        if (hi - t).min(t - lo) < eps {
            if insufficient || t >= hi || t <= lo {
                t = if (t - hi).abs() < (t - lo).abs() { hi - eps } else { lo + eps };
                insufficient = false;
            } else {
                insufficient = true;
            }
        } else {
            insufficient = false;
        }
        let trial = evaluate(t, &mut evals)?;
        if !armijo(&trial) || trial.f >= bracket[low].f {
            bracket[high] = trial;
        } else {
            if curvature(&trial) {
                done = true;
            } else if trial.gtd * (bracket[high].t - bracket[low].t) >= 0.0 {
                bracket[high] = bracket[low].clone();
            }
            bracket[low] = trial;
        }
        (low, high) = if bracket[0].f <= bracket[1].f { (0, 1) } else { (1, 0) };
    }
    Ok(Search { best: bracket.swap_remove(low), evals })
}

/// One outer L-BFGS iteration: quasi-Newton direction, strong-Wolfe line
/// search, history update.
///
/// `objective` maps a parameter vector to `(loss, gradient)`. An accepted step
/// always satisfies sufficient decrease; when no such step is found a short
/// gradient step is tried and kept only if it does not increase the loss.
pub fn lbfgs_step<E, F>(params: &mut [f64], mut objective: F, state: &mut LbfgsState) -> Result<LbfgsStep, E>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>), E>,
    E: From<OptimError>,
{
    let cfg = state.config;
    let mut evals = 0;
    let (f0, g0) = match state.cached.take() {
        Some((x, f, g)) if x.as_slice() == &*params => (f, g),
        _ => {
            evals += 1;
            objective(params)?
        }
    };
    if !f0.is_finite() {
        return Err(OptimError::NonFiniteLoss(f0).into());
    }
    if g0.len() != params.len() {
        return Err(OptimError::LengthMismatch { params: params.len(), grad: g0.len() }.into());
    }
    if let Some(index) = g0.iter().position(|g| !g.is_finite()) {
        return Err(OptimError::NonFiniteGradient { index, value: g0[index] }.into());
    }
    if inf_norm(&g0) <= cfg.grad_tol {
        state.cached = Some((params.to_vec(), f0, g0));
        return Ok(LbfgsStep {
            loss_before: f0,
            loss_after: f0,
            step_length: 0.0,
            evals,
            converged: true,
            fallback: false,
        });
    }

    let first_order_step = || {
        let l1: f64 = g0.iter().map(|g| g.abs()).sum();
        (1.0 / l1).min(1.0) * cfg.initial_step
    };
    let mut d = state.direction(&g0);
    let mut t0 = if state.history.is_empty() { first_order_step() } else { cfg.initial_step };
    let mut gtd = dot(&g0, &d);
    if !(gtd < 0.0) || !gtd.is_finite() {
        state.reset_history();
        d = g0.iter().map(|g| -g).collect();
        t0 = first_order_step();
        gtd = dot(&g0, &d);
    }

    let start = Trial { t: 0.0, f: f0, g: g0, gtd };
    let search = strong_wolfe(&mut objective, params, &d, &start, t0, &cfg)?;
    evals += search.evals;
    let best = search.best;

    let accepted = best.t > 0.0 && best.f.is_finite() && best.f <= f0 + cfg.c1 * best.t * gtd;
    if accepted {
        let s: Vec<f64> = d.iter().map(|di| best.t * di).collect();
        for (p, si) in params.iter_mut().zip(&s) {
            *p += si;
        }
        let y: Vec<f64> = best.g.iter().zip(&start.g).map(|(a, b)| a - b).collect();
        state.push(s, y);
        state.cached = Some((params.to_vec(), best.f, best.g));
        return Ok(LbfgsStep {
            loss_before: f0,
            loss_after: best.f,
            step_length: best.t,
            evals,
            converged: false,
            fallback: false,
        });
    }

    state.fallbacks += 1;
    state.reset_history();
    let trial: Vec<f64> = params
        .iter()
        .zip(&start.g)
        .map(|(p, g)| p - cfg.fallback_step * g)
        .collect();
    let (f1, g1) = objective(&trial)?;
    evals += 1;
    if f1.is_finite() && f1 <= f0 {
        params.copy_from_slice(&trial);
        state.cached = Some((trial, f1, g1));
        Ok(LbfgsStep {
            loss_before: f0,
            loss_after: f1,
            step_length: cfg.fallback_step,
            evals,
            converged: false,
            fallback: true,
        })
    } else {
        state.cached = Some((params.to_vec(), f0, start.g));
        Ok(LbfgsStep {
            loss_before: f0,
            loss_after: f0,
            step_length: 0.0,
            evals,
            converged: false,
            fallback: true,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[derive(Debug)]
    struct E;
    impl From<OptimError> for E {
        fn from(_: OptimError) -> Self {
            E
        }
    }

    fn rosenbrock(x: &[f64]) -> Result<(f64, Vec<f64>), E> {
        let (a, b) = (x[0], x[1]);
        let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
        let g = vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)];
        Ok((f, g))
    }

    fn quadratic(diag: &[f64]) -> impl Fn(&[f64]) -> Result<(f64, Vec<f64>), E> + '_ {
        move |x: &[f64]| {
            let f = 0.5 * x.iter().zip(diag).map(|(xi, a)| a * xi * xi).sum::<f64>();
            Ok((f, x.iter().zip(diag).map(|(xi, a)| a * xi).collect()))
        }
    }

    #[test]
    fn convex_quadratic_converges() {
        let diag: Vec<f64> = (1..=10).map(|i| i as f64).collect();
        let f = quadratic(&diag);
        let mut x: Vec<f64> = (0..10).map(|i| 1.0 - 0.15 * i as f64).collect();
        let mut st = LbfgsState::new(LbfgsConfig::default());
        let mut iters = 0;
        while iters < 50 {
            let gnorm = f(&x).unwrap().1.iter().map(|g| g * g).sum::<f64>().sqrt();
            if gnorm < 1e-8 {
                break;
            }
            lbfgs_step(&mut x, &f, &mut st).unwrap();
            iters += 1;
        }
        let gnorm = f(&x).unwrap().1.iter().map(|g| g * g).sum::<f64>().sqrt();
        assert!(gnorm < 1e-8, "gradient norm {gnorm} after {iters} iterations");
    }

    #[test]
    fn rosenbrock_converges() {
        let mut x = vec![-1.2, 1.0];
        let mut st = LbfgsState::new(LbfgsConfig::default());
        for _ in 0..200 {
            if rosenbrock(&x).unwrap().0 < 1e-8 {
                break;
            }
            lbfgs_step(&mut x, rosenbrock, &mut st).unwrap();
        }
        assert!(rosenbrock(&x).unwrap().0 < 1e-8);
    }

    #[test]
    fn zero_gradient_start_is_converged() {
        let diag = [1.0, 2.0];
        let mut x = vec![0.0, 0.0];
        let mut st = LbfgsState::new(LbfgsConfig::default());
        let step = lbfgs_step(&mut x, quadratic(&diag), &mut st).unwrap();
        assert!(step.converged);
        assert_eq!(x, vec![0.0, 0.0]);
    }

    #[test]
    fn line_search_survives_overflowing_trials() {
        // Loss is +inf beyond |x| > 2; the first trial step overshoots.
        let f = |x: &[f64]| -> Result<(f64, Vec<f64>), E> {
            if x[0].abs() > 2.0 {
                Ok((f64::INFINITY, vec![f64::NAN]))
            } else {
                Ok(((x[0] - 1.5).powi(2), vec![2.0 * (x[0] - 1.5)]))
            }
        };
        let mut x = vec![-1.0];
        let mut st = LbfgsState::new(LbfgsConfig { initial_step: 50.0, ..Default::default() });
        st.push(vec![1.0], vec![0.01]);
        let step = lbfgs_step(&mut x, f, &mut st).unwrap();
        assert!(step.loss_after < step.loss_before);
        assert!(x[0].abs() <= 2.0);
    }

    #[test]
    fn failed_line_search_falls_back() {
        // Gradient points the wrong way, so no step along -g decreases f.
        let f = |x: &[f64]| -> Result<(f64, Vec<f64>), E> { Ok((x[0] * x[0], vec![-2.0 * x[0] - 1.0])) };
        let mut x = vec![1.0];
        let mut st = LbfgsState::new(LbfgsConfig::default());
        let step = lbfgs_step(&mut x, f, &mut st).unwrap();
        assert!(step.fallback);
        assert_eq!(st.fallbacks(), 1);
        assert!(step.loss_after <= step.loss_before);
        assert_eq!(x, vec![1.0]);
    }

    #[test]
    fn non_finite_start_is_an_error() {
        let f = |_: &[f64]| -> Result<(f64, Vec<f64>), E> { Ok((f64::NAN, vec![0.0])) };
        let mut x = vec![0.0];
        let mut st = LbfgsState::new(LbfgsConfig::default());
        assert!(lbfgs_step(&mut x, f, &mut st).is_err());
    }

    #[test]
    fn cached_evaluation_is_reused() {
        let mut x = vec![-1.2, 1.0];
        let mut st = LbfgsState::new(LbfgsConfig::default());
        let (f, g) = rosenbrock(&x).unwrap();
        st.prime(&x, f, g);
        let mut calls = 0;
        let step = lbfgs_step(
            &mut x,
            |p: &[f64]| {
                calls += 1;
                rosenbrock(p)
            },
            &mut st,
        )
        .unwrap();
        assert_eq!(step.evals, calls);
        assert_eq!(step.loss_before, f);
    }

    proptest! {
        #[test]
        fn loss_never_increases_and_pairs_have_curvature(x0 in -2.0f64..2.0, x1 in -1.0f64..3.0) {
            let mut x = vec![x0, x1];
            let mut st = LbfgsState::new(LbfgsConfig::default());
            let mut last = rosenbrock(&x).unwrap().0;
            for _ in 0..40 {
                let step = lbfgs_step(&mut x, rosenbrock, &mut st).unwrap();
                prop_assert!(step.loss_after <= step.loss_before);
                prop_assert!(step.loss_before <= last);
                last = step.loss_after;
                prop_assert!(st.history_len() <= st.config.memory);
                for sy in st.curvatures() {
                    prop_assert!(sy > 1e-10);
                }
            }
        }

        #[test]
        fn deterministic(x0 in -2.0f64..2.0, x1 in -1.0f64..3.0) {
            let run = || {
                let mut x = vec![x0, x1];
                let mut st = LbfgsState::new(LbfgsConfig::default());
                for _ in 0..15 {
                    lbfgs_step(&mut x, rosenbrock, &mut st).unwrap();
                }
                x
            };
            let (a, b) = (run(), run());
            prop_assert_eq!(a[0].to_bits(), b[0].to_bits());
            prop_assert_eq!(a[1].to_bits(), b[1].to_bits());
        }
    }
}

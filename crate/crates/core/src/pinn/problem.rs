use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::PinnError;
use crate::autodiff::{Component, DiffValue, Tape};
use crate::net::ParamSet;

/// A point in the problem domain; only the first `input_dim` coordinates are
/// used. Two-dimensional problems order coordinates as `(x, t)`.
pub type Point = [f64; 2];

/// Terms kept when evaluating the heat-conduction series.
pub const HEAT_SERIES_TERMS: usize = 10_000;
/// Initial rod temperature of the inverse heat problem.
pub const HEAT_INITIAL_TEMPERATURE: f64 = 50.0;
/// Frequency of the low-frequency ODE forcing.
pub const LOW_FREQUENCY_OMEGA: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemName {
    SmoothRegression,
    DiscontinuousRegression,
    OdeSecondOrder,
    OdeLowFrequency,
    KleinGordon,
    InverseHeat,
}

impl ProblemName {
    pub const ALL: [ProblemName; 6] = [
        ProblemName::SmoothRegression,
        ProblemName::DiscontinuousRegression,
        ProblemName::OdeSecondOrder,
        ProblemName::OdeLowFrequency,
        ProblemName::KleinGordon,
        ProblemName::InverseHeat,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ProblemName::SmoothRegression => "smooth_regression",
            ProblemName::DiscontinuousRegression => "discontinuous_regression",
            ProblemName::OdeSecondOrder => "ode_second_order",
            ProblemName::OdeLowFrequency => "ode_low_frequency",
            ProblemName::KleinGordon => "klein_gordon",
            ProblemName::InverseHeat => "inverse_heat",
        }
    }

    pub fn is_regression(self) -> bool {
        matches!(self, ProblemName::SmoothRegression | ProblemName::DiscontinuousRegression)
    }
}

impl fmt::Display for ProblemName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ProblemName {
    type Err = PinnError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ProblemName::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| PinnError::UnknownProblem {
                name: s.to_string(),
                known: ProblemName::ALL.iter().map(|p| p.as_str()).collect::<Vec<_>>().join(", "),
            })
    }
}

/// The differential operator whose residual is penalised at collocation
/// points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Residual {
    /// `u'' + u' - 6u`
    SecondOrderOde,
    /// `u' - cos(ωx)`
    LowFrequency { omega: f64 },
    /// `u_tt - u_xx + u² - (-x·cos t + x²·cos² t)`
    KleinGordon,
    /// `u_t - κ·u_xx`, with `κ` a trainable extra coefficient.
    Heat,
}

/// Where the data-loss targets come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    /// Explicit points such as a Dirichlet condition.
    Fixed(Vec<DataPoint>),
    /// `count` points drawn uniformly over the domain, targets from the
    /// reference solution.
    Uniform { count: usize },
    /// `count` points drawn uniformly over the union of the `x = lo`, `x = hi`
    /// and `t = lo` edges, proportionally to edge length.
    Boundary { count: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DataPoint {
    pub point: Point,
    pub target: f64,
}

/// A prescribed first derivative, `∂u/∂(direction) = target` at `point`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivativeTerm {
    pub point: Point,
    pub direction: usize,
    pub target: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub residual: f64,
    pub data: f64,
    pub derivative: f64,
}

/// A trainable coefficient of the differential equation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtraCoefficient {
    pub name: String,
    pub initial: f64,
    /// Ground-truth value, when known.
    pub truth: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub name: ProblemName,
    pub input_dim: usize,
    pub domain: Vec<(f64, f64)>,
    pub residual: Option<Residual>,
    pub data: DataSource,
    pub derivative_terms: Vec<DerivativeTerm>,
    pub weights: LossWeights,
    /// Collocation points per epoch.
    pub n_f: usize,
    /// Draw fresh collocation points every epoch.
    pub resample: bool,
    pub extras: Vec<ExtraCoefficient>,
    /// Evenly spaced test points per dimension.
    pub test_points: Vec<usize>,
    pub series_terms: usize,
}

impl ProblemSpec {
    /// Number of data points.
    pub fn n_u(&self) -> usize {
        match &self.data {
            DataSource::Fixed(points) => points.len(),
            DataSource::Uniform { count } | DataSource::Boundary { count } => *count,
        }
    }

    /// Override the collocation count.
    pub fn with_n_f(mut self, n_f: usize) -> Self {
        self.n_f = n_f;
        self
    }

    /// Override the number of sampled data points. Fixed data is unaffected.
    pub fn with_n_u(mut self, n_u: usize) -> Self {
        match &mut self.data {
            DataSource::Fixed(_) => {}
            DataSource::Uniform { count } | DataSource::Boundary { count } => *count = n_u,
        }
        self
    }

    pub fn validate(&self) -> Result<(), PinnError> {
        let w = self.weights;
        if self.residual.is_some() && !(w.residual > 0.0) {
            return Err(PinnError::InvalidSpec("residual weight must be positive".into()));
        }
        if !(w.data > 0.0) {
            return Err(PinnError::InvalidSpec("data weight must be positive".into()));
        }
        if !self.derivative_terms.is_empty() && !(w.derivative > 0.0) {
            return Err(PinnError::InvalidSpec("derivative weight must be positive".into()));
        }
        if self.residual.is_some() && self.n_f == 0 {
            return Err(PinnError::InvalidSpec("N_f must be at least 1".into()));
        }
        if self.n_u() == 0 {
            return Err(PinnError::InvalidSpec("N_u must be at least 1".into()));
        }
        if self.domain.len() != self.input_dim {
            return Err(PinnError::InvalidSpec("domain bounds must match the input dimension".into()));
        }
        let inside = |p: &Point| {
            self.domain
                .iter()
                .enumerate()
                .all(|(d, &(lo, hi))| p[d] >= lo && p[d] <= hi)
        };
        if let DataSource::Fixed(points) = &self.data {
            if let Some(bad) = points.iter().find(|dp| !inside(&dp.point)) {
                return Err(PinnError::InvalidSpec(format!("data point {:?} lies outside the domain", bad.point)));
            }
        }
        if let Some(bad) = self.derivative_terms.iter().find(|t| !inside(&t.point) || t.direction >= self.input_dim) {
            return Err(PinnError::InvalidSpec(format!("invalid derivative term at {:?}", bad.point)));
        }
        Ok(())
    }

    /// Reference solution.
    pub fn reference(&self, p: &Point) -> f64 {
        let (x, t) = (p[0], p[1]);
        match self.name {
            ProblemName::SmoothRegression => 50.0 * ((x.powi(3) - x) * (7.0 * x).sin() / 7.0 + (12.0 * x).sin()),
            ProblemName::DiscontinuousRegression => {
                if x <= 0.0 {
                    40.0 * (6.0 * x).sin()
                } else {
                    200.0 + 20.0 * x * (12.0 * x).cos()
                }
            }
            ProblemName::OdeSecondOrder => (2.0 * x).exp() + (-3.0 * x).exp(),
            ProblemName::OdeLowFrequency => 100.0 * (LOW_FREQUENCY_OMEGA * x).sin(),
            ProblemName::KleinGordon => x * t.cos(),
            ProblemName::InverseHeat => heat_series_reference(x, t, self.series_terms),
        }
    }

    /// Evenly spaced test grid, row-major with the first coordinate fastest.
    pub fn test_grid(&self) -> Vec<Point> {
        let axes: Vec<Vec<f64>> = self
            .domain
            .iter()
            .zip(&self.test_points)
            .map(|(&(lo, hi), &n)| linspace(lo, hi, n))
            .collect();
        match axes.as_slice() {
            [xs] => xs.iter().map(|&x| [x, 0.0]).collect(),
            [xs, ts] => ts.iter().flat_map(|&t| xs.iter().map(move |&x| [x, t])).collect(),
            _ => unreachable!("problems are one- or two-dimensional"),
        }
    }

    /// Evaluate the residual functional at `p` for the given surrogate.
    pub fn residual_at(
        &self,
        tape: &mut Tape,
        surrogate: &dyn Surrogate,
        params: &ParamSet,
        p: &Point,
    ) -> Result<DiffValue, PinnError> {
        let residual = self
            .residual
            .ok_or_else(|| PinnError::InvalidSpec(format!("{} has no differential residual", self.name)))?;
        let (x, t) = (p[0], p[1]);
        let value = match residual {
            Residual::SecondOrderOde => {
                let u = eval_along(tape, surrogate, params, p, self.input_dim, Some(0))?;
                let lhs = tape.add(u.component(Component::D2), u.component(Component::D1));
                let rhs = tape.scale(u.component(Component::Primal), 6.0);
                tape.sub(lhs, rhs)
            }
            Residual::LowFrequency { omega } => {
                let u = eval_along(tape, surrogate, params, p, self.input_dim, Some(0))?;
                tape.offset(u.component(Component::D1), -(omega * x).cos())
            }
            Residual::KleinGordon => {
                let ux = eval_along(tape, surrogate, params, p, self.input_dim, Some(0))?;
                let ut = eval_along(tape, surrogate, params, p, self.input_dim, Some(1))?;
                let wave = tape.sub(ut.component(Component::D2), ux.component(Component::D2));
                let u = ux.component(Component::Primal);
                let nonlinear = tape.mul(u, u);
                let lhs = tape.add(wave, nonlinear);
                let forcing = -x * t.cos() + x * x * t.cos() * t.cos();
                tape.offset(lhs, -forcing)
            }
            Residual::Heat => {
                let kappa_at = params
                    .layout()
                    .extra("kappa")
                    .ok_or_else(|| PinnError::InvalidSpec("heat residual needs a `kappa` coefficient".into()))?;
                let kappa = tape.param(kappa_at, params.flat()[kappa_at]);
                let ux = eval_along(tape, surrogate, params, p, self.input_dim, Some(0))?;
                let ut = eval_along(tape, surrogate, params, p, self.input_dim, Some(1))?;
                let diffusion = tape.mul(kappa, ux.component(Component::D2));
                tape.sub(ut.component(Component::D1), diffusion)
            }
        };
        Ok(value)
    }

    /// The closed-form (or series) solution as a jet-valued surrogate.
    pub fn exact_surrogate(&self) -> ExactSolution {
        ExactSolution { name: self.name, series_terms: self.series_terms }
    }
}

/// Evaluate the surrogate at `p`, differentiating along coordinate
/// `direction` (or along none).
pub fn eval_along(
    tape: &mut Tape,
    surrogate: &dyn Surrogate,
    params: &ParamSet,
    p: &Point,
    input_dim: usize,
    direction: Option<usize>,
) -> Result<DiffValue, PinnError> {
    let mut inputs = [DiffValue::constant(0.0); 2];
    for d in 0..input_dim {
        let w = if direction == Some(d) { 1.0 } else { 0.0 };
        inputs[d] = tape.lift_input(p[d], w)?;
    }
    surrogate.eval(tape, params, &inputs[..input_dim])
}

/// Anything that maps seeded inputs to a jet-valued solution estimate.
pub trait Surrogate {
    fn eval(&self, tape: &mut Tape, params: &ParamSet, inputs: &[DiffValue]) -> Result<DiffValue, PinnError>;
}

/// Exact solutions evaluated on the jet algebra, used as residual-zero
/// oracles.
#[derive(Debug, Clone, Copy)]
pub struct ExactSolution {
    name: ProblemName,
    series_terms: usize,
}

impl Surrogate for ExactSolution {
    fn eval(&self, tape: &mut Tape, _params: &ParamSet, inputs: &[DiffValue]) -> Result<DiffValue, PinnError> {
        let x = inputs[0];
        let out = match self.name {
            ProblemName::SmoothRegression => {
                let x3 = tape.powi(x, 3);
                let cubic = tape.sub(x3, x);
                let s7x = tape.scale(x, 7.0);
                let s7 = tape.sin(s7x);
                let a = tape.mul(cubic, s7);
                let a = tape.scale(a, 1.0 / 7.0);
                let s12x = tape.scale(x, 12.0);
                let s12 = tape.sin(s12x);
                let sum = tape.add(a, s12);
                tape.scale(sum, 50.0)
            }
            ProblemName::DiscontinuousRegression => {
                if x.primal <= 0.0 {
                    let s = tape.scale(x, 6.0);
                    let s = tape.sin(s);
                    tape.scale(s, 40.0)
                } else {
                    let c = tape.scale(x, 12.0);
                    let c = tape.cos(c);
                    let xc = tape.mul(x, c);
                    let xc = tape.scale(xc, 20.0);
                    tape.offset(xc, 200.0)
                }
            }
            ProblemName::OdeSecondOrder => {
                let a = tape.scale(x, 2.0);
                let a = tape.exp(a);
                let b = tape.scale(x, -3.0);
                let b = tape.exp(b);
                tape.add(a, b)
            }
            ProblemName::OdeLowFrequency => {
                let s = tape.scale(x, LOW_FREQUENCY_OMEGA);
                let s = tape.sin(s);
                tape.scale(s, 100.0)
            }
            ProblemName::KleinGordon => {
                let c = tape.cos(inputs[1]);
                tape.mul(x, c)
            }
            ProblemName::InverseHeat => heat_series_jet(tape, x, inputs[1], self.series_terms),
        };
        if !out.is_finite() {
            return Err(PinnError::NonFinite { what: "exact solution".into(), point: [x.primal, inputs.get(1).map_or(0.0, |t| t.primal)] });
        }
        Ok(out)
    }
}

/// Partial sum of the rod-cooling series with `u₀ = 50`:
/// `(4u₀/π)·Σ_{i=1..terms} sin((2i−1)πx)/(2i−1)·exp(−(2i−1)²π²t)`.
pub fn heat_series_reference(x: f64, t: f64, terms: usize) -> f64 {
    let mut sum = 0.0;
    for i in 1..=terms {
        let n = (2 * i - 1) as f64;
        let decay = (-n * n * PI * PI * t).exp();
        if decay == 0.0 {
            // every later term underflows too
            break;
        }
        sum += (n * PI * x).sin() / n * decay;
    }
    4.0 * HEAT_INITIAL_TEMPERATURE / PI * sum
}

fn heat_series_jet(tape: &mut Tape, x: DiffValue, t: DiffValue, terms: usize) -> DiffValue {
    let mut sum = DiffValue::constant(0.0);
    for i in 1..=terms {
        let n = (2 * i - 1) as f64;
        if (-n * n * PI * PI * t.primal).exp() == 0.0 {
            break;
        }
        let arg = tape.scale(x, n * PI);
        let s = tape.sin(arg);
        let rate = tape.scale(t, -n * n * PI * PI);
        let decay = tape.exp(rate);
        let term = tape.mul(s, decay);
        let term = tape.scale(term, 1.0 / n);
        sum = tape.add(sum, term);
    }
    tape.scale(sum, 4.0 * HEAT_INITIAL_TEMPERATURE / PI)
}

pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}

/// Build one of the benchmark problems with its full-size constants.
pub fn make_problem(name: &str) -> Result<ProblemSpec, PinnError> {
    Ok(problem(name.parse()?))
}

pub fn problem(name: ProblemName) -> ProblemSpec {
    let unit = LossWeights { residual: 1.0, data: 1.0, derivative: 1.0 };
    let base = ProblemSpec {
        name,
        input_dim: 1,
        domain: vec![(0.0, 1.0)],
        residual: None,
        data: DataSource::Fixed(Vec::new()),
        derivative_terms: Vec::new(),
        weights: unit,
        n_f: 0,
        resample: false,
        extras: Vec::new(),
        test_points: vec![201],
        series_terms: HEAT_SERIES_TERMS,
    };
    match name {
        ProblemName::SmoothRegression => ProblemSpec {
            domain: vec![(-3.0, 3.0)],
            data: DataSource::Uniform { count: 300 },
            test_points: vec![1000],
            ..base
        },
        ProblemName::DiscontinuousRegression => ProblemSpec {
            domain: vec![(-4.0, 3.75)],
            data: DataSource::Uniform { count: 300 },
            test_points: vec![1000],
            ..base
        },
        ProblemName::OdeSecondOrder => ProblemSpec {
            domain: vec![(0.0, 2.0)],
            residual: Some(Residual::SecondOrderOde),
            data: DataSource::Fixed(vec![DataPoint { point: [0.0, 0.0], target: 2.0 }]),
            derivative_terms: vec![DerivativeTerm { point: [0.0, 0.0], direction: 0, target: -1.0 }],
            n_f: 1000,
            resample: true,
            ..base
        },
        ProblemName::OdeLowFrequency => ProblemSpec {
            domain: vec![(-600.0, 600.0)],
            residual: Some(Residual::LowFrequency { omega: LOW_FREQUENCY_OMEGA }),
            data: DataSource::Fixed(vec![DataPoint { point: [0.0, 0.0], target: 0.0 }]),
            weights: LossWeights { residual: 100.0, data: 1.0, derivative: 1.0 },
            n_f: 10_000,
            resample: true,
            ..base
        },
        ProblemName::KleinGordon => ProblemSpec {
            input_dim: 2,
            domain: vec![(-5.0, 5.0), (0.0, 10.0)],
            residual: Some(Residual::KleinGordon),
            data: DataSource::Boundary { count: 500 },
            n_f: 10_000,
            resample: true,
            test_points: vec![101, 101],
            ..base
        },
        ProblemName::InverseHeat => ProblemSpec {
            input_dim: 2,
            domain: vec![(0.0, 1.0), (0.0, 0.1)],
            residual: Some(Residual::Heat),
            data: DataSource::Uniform { count: 5000 },
            n_f: 50_000,
            resample: false,
            extras: vec![ExtraCoefficient { name: "kappa".into(), initial: 0.0, truth: Some(1.0) }],
            test_points: vec![101, 101],
            ..base
        },
    }
}

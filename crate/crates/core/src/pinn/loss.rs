use std::cell::Cell;

use crate::autodiff::{Component, DiffValue, NodeId, Tape};
use crate::net::{forward, JetBatch, NetConfig, ParamSet};

use super::problem::{eval_along, DataPoint, DerivativeTerm, Point, ProblemSpec, Surrogate};
use super::PinnError;

/// Points for one loss evaluation.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SampleSet {
    pub residual: Vec<Point>,
    pub data: Vec<DataPoint>,
    pub derivative: Vec<DerivativeTerm>,
}

/// Loss value, its components and the gradient over the flat parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub total: f64,
    pub mse_f: f64,
    pub mse_u: f64,
    /// Mean squared mismatch of prescribed first derivatives.
    pub mse_g: f64,
    /// `γ·Σβ²`, zero unless a regularizer was added.
    pub regularizer: f64,
    pub gradient: Vec<f64>,
}

impl LossReport {
    /// Add `γ·Σβ²` over every activation scale to the loss and its gradient.
    pub fn add_beta_regularizer(&mut self, params: &ParamSet, gamma: f64) {
        if gamma == 0.0 {
            return;
        }
        let r = beta_regularizer(params, gamma, &mut self.gradient);
        self.regularizer += r;
        self.total += r;
    }
}

/// `γ·Σβ²`; adds its gradient into `grad`.
pub fn beta_regularizer(params: &ParamSet, gamma: f64, grad: &mut [f64]) -> f64 {
    let layout = params.layout();
    let mut sum = 0.0;
    for k in 0..layout.depth() {
        for i in 0..layout.dims()[k + 1] {
            if let Some(at) = layout.beta(k, i) {
                let b = params.flat()[at];
                sum += b * b;
                grad[at] += 2.0 * gamma * b;
            }
        }
    }
    gamma * sum
}

/// The network as a surrogate for the solution.
#[derive(Debug, Clone)]
pub struct NetSurrogate<'a> {
    pub config: &'a NetConfig,
}

impl Surrogate for NetSurrogate<'_> {
    fn eval(&self, tape: &mut Tape, params: &ParamSet, inputs: &[DiffValue]) -> Result<DiffValue, PinnError> {
        Ok(forward(tape, params, self.config, inputs)?[0])
    }
}

/// Composite loss of the network described by `net`.
pub fn evaluate_loss(spec: &ProblemSpec, net: &NetConfig, params: &ParamSet, points: &SampleSet) -> Result<LossReport, PinnError> {
    LossWorkspace::new(spec.input_dim).evaluate(spec, net, params, points)
}

/// Points pushed through the network per batch.
const CHUNK: usize = 256;

/// Network jets already computed for one point, one per input direction.
struct Precomputed<'a> {
    jets: &'a [[f64; 3]],
    /// First tape leaf of each direction's jet, once requested.
    leaves: Cell<[Option<NodeId>; 2]>,
}

impl Surrogate for Precomputed<'_> {
    fn eval(&self, tape: &mut Tape, _params: &ParamSet, inputs: &[DiffValue]) -> Result<DiffValue, PinnError> {
        let direction = inputs.iter().position(|v| v.d1 != 0.0).unwrap_or(0);
        let [u, d1, d2] = self.jets[direction];
        let jet = tape.external(u, d1, d2);
        let mut leaves = self.leaves.get();
        leaves[direction] = jet.node(Component::Primal);
        self.leaves.set(leaves);
        Ok(jet)
    }
}

/// Reusable buffers for repeated loss evaluations of one network.
///
/// The network runs batched over many points with a hand-derived backward
/// pass; only the residual functional is recorded on the tape, once per
/// point, on top of the network's output jets.
pub struct LossWorkspace {
    batches: Vec<JetBatch>,
    tape: Tape,
    adj: Vec<f64>,
    inputs: Vec<f64>,
    jets: Vec<[f64; 3]>,
    seeds: Vec<Vec<[f64; 3]>>,
}

impl LossWorkspace {
    pub fn new(input_dim: usize) -> Self {
        LossWorkspace {
            batches: (0..input_dim).map(|_| JetBatch::new()).collect(),
            tape: Tape::new(0),
            adj: Vec::new(),
            inputs: Vec::new(),
            jets: Vec::new(),
            seeds: vec![Vec::new(); input_dim],
        }
    }

    fn load(&mut self, spec: &ProblemSpec, points: impl Iterator<Item = Point>) {
        self.inputs.clear();
        for p in points {
            self.inputs.extend_from_slice(&p[..spec.input_dim]);
        }
    }

    pub fn evaluate(&mut self, spec: &ProblemSpec, net: &NetConfig, params: &ParamSet, points: &SampleSet) -> Result<LossReport, PinnError> {
        let dim = spec.input_dim;
        if net.input_dim != dim || self.batches.len() != dim {
            return Err(PinnError::InvalidSpec(format!("{} needs {dim} network inputs", spec.name)));
        }
        let n = params.len();
        let act = net.activation;
        let w = spec.weights;
        let mut gradient = vec![0.0; n];

        let mut sum_f = 0.0;
        if !points.residual.is_empty() {
            let scale = 2.0 * w.residual / points.residual.len() as f64;
            for chunk in points.residual.chunks(CHUNK) {
                self.load(spec, chunk.iter().copied());
                for (d, batch) in self.batches.iter_mut().enumerate() {
                    batch.forward(params, act, &self.inputs, Some(d));
                }
                for s in &mut self.seeds {
                    s.clear();
                }
                for (q, p) in chunk.iter().enumerate() {
                    self.jets.clear();
                    self.jets.extend(self.batches.iter().map(|b| b.output(q, 0)));
                    self.tape.reset(n);
                    let pre = Precomputed { jets: &self.jets, leaves: Cell::new([None; 2]) };
                    let r = spec.residual_at(&mut self.tape, &pre, params, p)?;
                    sum_f += r.primal * r.primal;
                    if !sum_f.is_finite() {
                        return Err(PinnError::NonFinite { what: "residual".into(), point: *p });
                    }
                    if let Some(node) = r.node(Component::Primal) {
                        self.tape.backprop(&[(node, scale * r.primal)], &mut gradient, &mut self.adj);
                    } else {
                        self.adj.clear();
                    }
                    let leaves = pre.leaves.get();
                    for d in 0..dim {
                        let get = |node: NodeId| self.tape.adjoint(&self.adj, node);
                        self.seeds[d].push(match leaves[d] {
                            Some(leaf) => [get(leaf), get(leaf + 1), get(leaf + 2)],
                            None => [0.0; 3],
                        });
                    }
                }
                for (d, batch) in self.batches.iter_mut().enumerate() {
                    batch.backward(params, &self.seeds[d], &mut gradient);
                }
            }
        }

        let mut sum_u = 0.0;
        if !points.data.is_empty() {
            let scale = 2.0 * w.data / points.data.len() as f64;
            for chunk in points.data.chunks(CHUNK) {
                self.load(spec, chunk.iter().map(|dp| dp.point));
                let batch = &mut self.batches[0];
                batch.forward(params, act, &self.inputs, None);
                let seeds = &mut self.seeds[0];
                seeds.clear();
                for (q, dp) in chunk.iter().enumerate() {
                    let diff = batch.output(q, 0)[0] - dp.target;
                    sum_u += diff * diff;
                    if !sum_u.is_finite() {
                        return Err(PinnError::NonFinite { what: "data misfit".into(), point: dp.point });
                    }
                    seeds.push([scale * diff, 0.0, 0.0]);
                }
                batch.backward(params, seeds, &mut gradient);
            }
        }

        let mut sum_g = 0.0;
        if !points.derivative.is_empty() {
            let scale = 2.0 * w.derivative / points.derivative.len() as f64;
            for term in &points.derivative {
                self.load(spec, std::iter::once(term.point));
                let batch = &mut self.batches[0];
                batch.forward(params, act, &self.inputs, Some(term.direction));
                let diff = batch.output(0, 0)[1] - term.target;
                sum_g += diff * diff;
                if !sum_g.is_finite() {
                    return Err(PinnError::NonFinite { what: "derivative misfit".into(), point: term.point });
                }
                batch.backward(params, &[[0.0, scale * diff, 0.0]], &mut gradient);
            }
        }

        Ok(report(spec, sum_f, sum_u, sum_g, points, gradient))
    }
}

fn report(spec: &ProblemSpec, sum_f: f64, sum_u: f64, sum_g: f64, points: &SampleSet, gradient: Vec<f64>) -> LossReport {
    let w = spec.weights;
    let mean = |s: f64, len: usize| if len == 0 { 0.0 } else { s / len as f64 };
    let mse_f = mean(sum_f, points.residual.len());
    let mse_u = mean(sum_u, points.data.len());
    let mse_g = mean(sum_g, points.derivative.len());
    LossReport {
        total: w.residual * mse_f + w.data * mse_u + w.derivative * mse_g,
        mse_f,
        mse_u,
        mse_g,
        regularizer: 0.0,
        gradient,
    }
}

/// Composite loss `w_F·MSE_F + w_u·MSE_u + w_g·MSE_g` of any surrogate.
///
/// Each point is recorded on `tape` (reset per point) and swept once, so
/// memory stays bounded by one point's graph. Sums run in point order.
pub fn evaluate_loss_with(
    spec: &ProblemSpec,
    surrogate: &dyn Surrogate,
    params: &ParamSet,
    points: &SampleSet,
    tape: &mut Tape,
) -> Result<LossReport, PinnError> {
    let n = params.len();
    let w = spec.weights;
    let mut gradient = vec![0.0; n];
    let mut adj = Vec::new();
    let mut seeds: Vec<(NodeId, f64)> = Vec::with_capacity(1);
    let mut sweep = |tape: &Tape, node: Option<NodeId>, seed: f64, gradient: &mut [f64]| {
        if let Some(node) = node {
            seeds.clear();
            seeds.push((node, seed));
            tape.backprop(&seeds, gradient, &mut adj);
        }
    };

    let mut sum_f = 0.0;
    if !points.residual.is_empty() {
        let scale = 2.0 * w.residual / points.residual.len() as f64;
        for p in &points.residual {
            tape.reset(n);
            let r = spec.residual_at(tape, surrogate, params, p)?;
            sum_f += r.primal * r.primal;
            if !sum_f.is_finite() {
                return Err(PinnError::NonFinite { what: "residual".into(), point: *p });
            }
            sweep(tape, r.node(Component::Primal), scale * r.primal, &mut gradient);
        }
    }

    let mut sum_u = 0.0;
    if !points.data.is_empty() {
        let scale = 2.0 * w.data / points.data.len() as f64;
        for dp in &points.data {
            tape.reset(n);
            let u = eval_along(tape, surrogate, params, &dp.point, spec.input_dim, None)?;
            let diff = u.primal - dp.target;
            sum_u += diff * diff;
            if !sum_u.is_finite() {
                return Err(PinnError::NonFinite { what: "data misfit".into(), point: dp.point });
            }
            sweep(tape, u.node(Component::Primal), scale * diff, &mut gradient);
        }
    }

    let mut sum_g = 0.0;
    if !points.derivative.is_empty() {
        let scale = 2.0 * w.derivative / points.derivative.len() as f64;
        for term in &points.derivative {
            tape.reset(n);
            let u = eval_along(tape, surrogate, params, &term.point, spec.input_dim, Some(term.direction))?;
            let diff = u.d1 - term.target;
            sum_g += diff * diff;
            if !sum_g.is_finite() {
                return Err(PinnError::NonFinite { what: "derivative misfit".into(), point: term.point });
            }
            sweep(tape, u.node(Component::D1), scale * diff, &mut gradient);
        }
    }

    Ok(report(spec, sum_f, sum_u, sum_g, points, gradient))
}

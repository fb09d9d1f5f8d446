//! Fully connected networks `L_D ∘ σ ∘ L_{D-1} ∘ … ∘ σ ∘ L_1` with a
//! choice of hidden activation.
//!
//! * `Tanh`: `tanh(x)`, no trainable scales.
//! * `NLaaf`: `tanh(β·x)` with one trainable `β` per hidden neuron.
//! * `Stan`: `tanh(x) + β·x·tanh(x)` with one trainable `β` per hidden neuron.
//!
//! The output layer is always purely affine.

mod batch;
mod params;

pub use batch::JetBatch;
pub use params::{Checkpoint, LayerCheckpoint, Layout, ParamClass, ParamSet};

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{DiffValue, Fault, Tape};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetError {
    #[error("invalid network config: {0}")]
    Config(String),
    #[error("parameter shape mismatch: {0}")]
    Shape(String),
    #[error("expected {expected} inputs, got {got}")]
    InputLen { expected: usize, got: usize },
    #[error("non-finite activation in layer {layer}: {detail}")]
    NonFinite { layer: usize, detail: String, fault: Option<Fault> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivationTag {
    Tanh,
    Nlaaf,
    Stan,
}

impl ActivationTag {
    pub const ALL: [ActivationTag; 3] = [ActivationTag::Tanh, ActivationTag::Nlaaf, ActivationTag::Stan];

    pub fn name(self) -> &'static str {
        match self {
            ActivationTag::Tanh => "tanh",
            ActivationTag::Nlaaf => "nlaaf",
            ActivationTag::Stan => "stan",
        }
    }

    pub fn with_beta(self, beta_init: f64) -> ActivationKind {
        match self {
            ActivationTag::Tanh => ActivationKind::Tanh,
            ActivationTag::Nlaaf => ActivationKind::NLaaf { beta_init },
            ActivationTag::Stan => ActivationKind::Stan { beta_init },
        }
    }
}

impl std::fmt::Display for ActivationTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ActivationKind {
    Tanh,
    NLaaf { beta_init: f64 },
    Stan { beta_init: f64 },
}

impl ActivationKind {
    pub fn tag(self) -> ActivationTag {
        match self {
            ActivationKind::Tanh => ActivationTag::Tanh,
            ActivationKind::NLaaf { .. } => ActivationTag::Nlaaf,
            ActivationKind::Stan { .. } => ActivationTag::Stan,
        }
    }

    pub fn has_scales(self) -> bool {
        !matches!(self, ActivationKind::Tanh)
    }

    pub fn beta_init(self) -> Option<f64> {
        match self {
            ActivationKind::Tanh => None,
            ActivationKind::NLaaf { beta_init } | ActivationKind::Stan { beta_init } => Some(beta_init),
        }
    }

    /// Plain scalar evaluation.
    pub fn eval(self, x: f64, beta: f64) -> f64 {
        match self {
            ActivationKind::Tanh => x.tanh(),
            ActivationKind::NLaaf { .. } => (beta * x).tanh(),
            ActivationKind::Stan { .. } => {
                let t = x.tanh();
                t + beta * x * t
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    pub activation: ActivationKind,
    pub seed: u64,
}

impl NetConfig {
    /// `depth` hidden layers of equal `width`.
    pub fn uniform(input_dim: usize, depth: usize, width: usize, output_dim: usize, activation: ActivationKind, seed: u64) -> Self {
        NetConfig {
            input_dim,
            hidden: vec![width; depth],
            output_dim,
            activation,
            seed,
        }
    }

    /// Number of affine layers `D`.
    pub fn depth(&self) -> usize {
        self.hidden.len() + 1
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 2);
        dims.push(self.input_dim);
        dims.extend_from_slice(&self.hidden);
        dims.push(self.output_dim);
        dims
    }

    pub fn layout(&self) -> Layout {
        Layout::new(&self.dims(), self.activation.has_scales(), &[])
    }

    pub fn validate(&self) -> Result<(), NetError> {
        if self.hidden.is_empty() {
            return Err(NetError::Config("depth must be at least 2 (one hidden layer)".into()));
        }
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden.contains(&0) {
            return Err(NetError::Config("every layer width must be at least 1".into()));
        }
        if let Some(b) = self.activation.beta_init() {
            if !b.is_finite() {
                return Err(NetError::Config(format!("initial scale must be finite, got {b}")));
            }
        }
        Ok(())
    }
}

/// Seeded parameters: uniform weights in `±sqrt(6/(fan_in+fan_out))`, zero
/// biases, every scale set to the activation's initial value.
pub fn init_params(cfg: &NetConfig) -> Result<ParamSet, NetError> {
    cfg.validate()?;
    let layout = cfg.layout();
    let mut params = ParamSet::zeros(layout.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let dims = layout.dims();
    for k in 0..layout.depth() {
        let (fan_in, fan_out) = (dims[k], dims[k + 1]);
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit);
        for i in 0..fan_out {
            for j in 0..fan_in {
                params.flat_mut()[layout.weight(k, i, j)] = dist.sample(&mut rng);
            }
        }
        if let (Some(beta), Some(_)) = (cfg.activation.beta_init(), layout.beta(k, 0)) {
            for i in 0..fan_out {
                params.flat_mut()[layout.beta(k, i).unwrap()] = beta;
            }
        }
    }
    Ok(params)
}

/// Apply the hidden activation on the tape. `beta` is ignored for `Tanh`.
pub fn activate(tape: &mut Tape, kind: ActivationKind, x: DiffValue, beta: DiffValue) -> DiffValue {
    match kind {
        ActivationKind::Tanh => tape.tanh(x),
        ActivationKind::NLaaf { .. } => {
            let bx = tape.mul(beta, x);
            tape.tanh(bx)
        }
        ActivationKind::Stan { .. } => {
            let t = tape.tanh(x);
            let xt = tape.mul(x, t);
            let scaled = tape.mul(beta, xt);
            tape.add(t, scaled)
        }
    }
}

/// Forward pass on the tape. The first `params.len()` tape leaves must stand
/// for the flat parameter vector.
pub fn forward(tape: &mut Tape, params: &ParamSet, cfg: &NetConfig, input: &[DiffValue]) -> Result<Vec<DiffValue>, NetError> {
    if input.len() != cfg.input_dim {
        return Err(NetError::InputLen { expected: cfg.input_dim, got: input.len() });
    }
    let layout = params.layout();
    let values = params.flat();
    let dims = layout.dims();
    let depth = layout.depth();
    let mut current = input.to_vec();
    let mut next = Vec::with_capacity(dims.iter().copied().max().unwrap_or(1));
    for k in 0..depth {
        let cols = dims[k];
        next.clear();
        for i in 0..dims[k + 1] {
            let w0 = layout.weight(k, i, 0);
            let bi = layout.bias(k, i);
            let z = tape.affine_row(&values[w0..w0 + cols], w0, &current, values[bi], bi);
            let a = if k + 1 < depth {
                let beta = match layout.beta(k, i) {
                    Some(at) => tape.param(at, values[at]),
                    None => DiffValue::constant(0.0),
                };
                activate(tape, cfg.activation, z, beta)
            } else {
                z
            };
            next.push(a);
        }
        if let Some(bad) = next.iter().find(|v| !v.is_finite()) {
            return Err(NetError::NonFinite {
                layer: k + 1,
                detail: format!("value {} / d1 {} / d2 {}", bad.primal, bad.d1, bad.d2),
                fault: tape.fault(),
            });
        }
        std::mem::swap(&mut current, &mut next);
    }
    Ok(current)
}

/// Plain floating-point forward pass, no derivatives.
pub fn eval(params: &ParamSet, activation: ActivationKind, input: &[f64]) -> Vec<f64> {
    let layout = params.layout();
    let dims = layout.dims();
    let depth = layout.depth();
    let mut current = input.to_vec();
    let mut next = Vec::new();
    for k in 0..depth {
        next.clear();
        let w = params.weights(k);
        let b = params.biases(k);
        let betas = params.betas(k);
        for i in 0..dims[k + 1] {
            let row = &w[i * dims[k]..(i + 1) * dims[k]];
            let z = b[i] + row.iter().zip(&current).map(|(a, c)| a * c).sum::<f64>();
            next.push(if k + 1 < depth {
                activation.eval(z, betas.map_or(0.0, |bs| bs[i]))
            } else {
                z
            });
        }
        std::mem::swap(&mut current, &mut next);
    }
    current
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn stan(beta: f64) -> ActivationKind {
        ActivationKind::Stan { beta_init: beta }
    }

    fn slope(kind: ActivationKind, x: f64, beta: f64) -> f64 {
        let mut tape = Tape::new(0);
        let xv = tape.lift_input(x, 1.0).unwrap();
        activate(&mut tape, kind, xv, DiffValue::constant(beta)).d1
    }

    #[test]
    fn init_is_deterministic() {
        let cfg = NetConfig::uniform(1, 3, 8, 1, stan(1.0), 7);
        assert_eq!(init_params(&cfg).unwrap(), init_params(&cfg).unwrap());
        let other = NetConfig { seed: 8, ..cfg.clone() };
        assert_ne!(init_params(&cfg).unwrap(), init_params(&other).unwrap());
    }

    #[test]
    fn init_sets_scales_and_zero_biases() {
        for beta in [1.0, 0.25] {
            let cfg = NetConfig::uniform(2, 4, 6, 1, stan(beta), 3);
            let p = init_params(&cfg).unwrap();
            for k in 0..cfg.depth() {
                assert!(p.biases(k).iter().all(|&b| b == 0.0));
                match p.betas(k) {
                    Some(bs) => assert!(bs.iter().all(|&b| b == beta)),
                    None => assert_eq!(k, cfg.depth() - 1),
                }
                let limit = (6.0 / (cfg.dims()[k] + cfg.dims()[k + 1]) as f64).sqrt();
                assert!(p.weights(k).iter().all(|w| w.abs() <= limit));
            }
        }
    }

    #[test]
    fn stan_adds_one_scale_per_hidden_neuron() {
        let hidden = vec![5, 7, 3];
        let t = NetConfig { input_dim: 2, hidden: hidden.clone(), output_dim: 1, activation: ActivationKind::Tanh, seed: 0 };
        let s = NetConfig { activation: stan(1.0), ..t.clone() };
        let n = NetConfig { activation: ActivationKind::NLaaf { beta_init: 1.0 }, ..t.clone() };
        let extra: usize = hidden.iter().sum();
        assert_eq!(s.layout().len(), t.layout().len() + extra);
        assert_eq!(n.layout().len(), t.layout().len() + extra);
    }

    #[test]
    fn config_validation() {
        let mut cfg = NetConfig::uniform(1, 0, 4, 1, ActivationKind::Tanh, 0);
        assert!(cfg.validate().is_err());
        cfg.hidden = vec![4, 0];
        assert!(cfg.validate().is_err());
        cfg.hidden = vec![4, 1];
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn stan_at_origin_has_unit_slope() {
        for beta in [-1.0, 0.0, 0.3, 2.0] {
            let mut tape = Tape::new(0);
            let x = tape.lift_input(0.0, 1.0).unwrap();
            let y = activate(&mut tape, stan(beta), x, DiffValue::constant(beta));
            assert_eq!(y.primal, 0.0);
            assert_eq!(y.d1, 1.0);
        }
    }

    #[test]
    fn stan_value_at_one() {
        let expected = 2.0 * 1.0f64.tanh();
        assert!((stan(1.0).eval(1.0, 1.0) - expected).abs() < 1e-15);
        assert!((expected - 1.5231883).abs() < 1e-7);
    }

    #[test]
    fn non_saturation_limits() {
        for beta in [0.5, 1.0, 2.0] {
            assert!((slope(stan(beta), 25.0, beta) - beta).abs() < 1e-6);
            assert!((slope(stan(beta), -25.0, beta) + beta).abs() < 1e-6);
        }
        assert!((slope(stan(1.0), 20.0, 1.0) - 1.0).abs() < 1e-6);
        assert!(slope(ActivationKind::Tanh, 25.0, 0.0).abs() < 1e-6);
        assert!(slope(ActivationKind::Tanh, -25.0, 0.0).abs() < 1e-6);
    }

    #[test]
    fn zero_network_outputs_zero() {
        let cfg = NetConfig::uniform(2, 2, 4, 1, stan(1.0), 0);
        let p = ParamSet::zeros(cfg.layout());
        let mut tape = Tape::new(p.len());
        let x = [tape.lift_input(0.3, 1.0).unwrap(), tape.lift_input(-2.0, 0.0).unwrap()];
        let out = forward(&mut tape, &p, &cfg, &x).unwrap();
        assert_eq!(out[0].primal, 0.0);
        assert_eq!(eval(&p, cfg.activation, &[5.0, 1.0]), vec![0.0]);
    }

    #[test]
    fn single_neuron_composition() {
        let cfg = NetConfig::uniform(1, 1, 1, 1, stan(1.0), 0);
        let mut p = ParamSet::zeros(cfg.layout());
        let l = p.layout().clone();
        p.flat_mut()[l.weight(0, 0, 0)] = 1.0;
        p.flat_mut()[l.beta(0, 0).unwrap()] = 1.0;
        p.flat_mut()[l.weight(1, 0, 0)] = 1.0;
        let mut tape = Tape::new(p.len());
        let x = tape.lift_input(1.0, 1.0).unwrap();
        let out = forward(&mut tape, &p, &cfg, &[x]).unwrap();
        assert!((out[0].primal - 2.0 * 1.0f64.tanh()).abs() < 1e-15);
    }

    #[test]
    fn wrong_input_length_is_rejected() {
        let cfg = NetConfig::uniform(2, 1, 3, 1, ActivationKind::Tanh, 0);
        let p = init_params(&cfg).unwrap();
        let mut tape = Tape::new(p.len());
        let x = tape.lift_input(1.0, 1.0).unwrap();
        assert!(matches!(forward(&mut tape, &p, &cfg, &[x]), Err(NetError::InputLen { .. })));
    }

    #[test]
    fn overflow_reports_layer() {
        let cfg = NetConfig::uniform(1, 2, 2, 1, stan(1.0), 0);
        let mut p = init_params(&cfg).unwrap();
        for v in p.flat_mut() {
            *v = 1e300;
        }
        let mut tape = Tape::new(p.len());
        let x = tape.lift_input(1.0, 1.0).unwrap();
        match forward(&mut tape, &p, &cfg, &[x]) {
            Err(NetError::NonFinite { layer, .. }) => assert_eq!(layer, 1),
            other => panic!("expected overflow, got {other:?}"),
        }
    }

    #[test]
    fn checkpoint_round_trip_and_mismatch() {
        let cfg = NetConfig::uniform(2, 2, 3, 1, stan(0.5), 11);
        let p = init_params(&cfg).unwrap().with_extra("kappa", 0.7);
        let json = serde_json::to_string(&p.to_checkpoint()).unwrap();
        let back: Checkpoint = serde_json::from_str(&json).unwrap();
        let restored = ParamSet::from_checkpoint(p.layout().clone(), &back).unwrap();
        assert_eq!(restored, p);
        assert!(json.contains("\"W\"") && json.contains("\"kappa\""));

        let wider = NetConfig::uniform(2, 2, 4, 1, stan(0.5), 11).layout();
        assert!(ParamSet::from_checkpoint(wider, &back).is_err());
        let tanh = NetConfig { activation: ActivationKind::Tanh, ..cfg }.layout();
        assert!(ParamSet::from_checkpoint(tanh, &back).is_err());
    }

    proptest! {
        #[test]
        fn flatten_round_trips(seed in 0u64..1000, width in 1usize..6) {
            let cfg = NetConfig::uniform(2, 2, width, 1, stan(1.0), seed);
            let p = init_params(&cfg).unwrap();
            let back = ParamSet::from_flat(p.layout().clone(), p.flatten()).unwrap();
            prop_assert_eq!(back, p);
        }

        #[test]
        fn stan_symmetry_identity(x in -30.0f64..30.0, beta in -3.0f64..3.0) {
            let s = stan(beta);
            let sum = s.eval(x, beta) + s.eval(-x, beta);
            prop_assert!((sum - 2.0 * beta * x * x.tanh()).abs() <= 1e-12 * (1.0 + x.abs() * beta.abs()));
        }

        #[test]
        fn stan_without_scale_is_tanh(x in -40.0f64..40.0) {
            prop_assert_eq!(stan(0.0).eval(x, 0.0), x.tanh());
            let mut tape = Tape::new(0);
            let xv = tape.lift_input(x, 1.0).unwrap();
            let a = activate(&mut tape, stan(0.0), xv, DiffValue::constant(0.0));
            let b = tape.tanh(xv);
            prop_assert_eq!((a.primal, a.d1, a.d2), (b.primal, b.d1, b.d2));
        }

        #[test]
        fn tape_forward_matches_plain_eval_and_fd(seed in 0u64..500, x in -2.0f64..2.0) {
            for kind in [ActivationKind::Tanh, ActivationKind::NLaaf { beta_init: 1.2 }, stan(0.8)] {
                let cfg = NetConfig::uniform(1, 2, 5, 1, kind, seed);
                let p = init_params(&cfg).unwrap();
                let run = |x: f64| {
                    let mut tape = Tape::new(p.len());
                    let xv = tape.lift_input(x, 1.0).unwrap();
                    forward(&mut tape, &p, &cfg, &[xv]).unwrap()[0]
                };
                let y = run(x);
                prop_assert!((y.primal - eval(&p, kind, &[x])[0]).abs() < 1e-14);
                let h = 1e-4;
                let fd2 = (eval(&p, kind, &[x + h])[0] - 2.0 * y.primal + eval(&p, kind, &[x - h])[0]) / (h * h);
                prop_assert!((y.d2 - fd2).abs() / y.d2.abs().max(1.0) < 1e-4);
            }
        }
    }
}

use std::fmt;

use super::value::{Component, DiffValue, NO_NODE};
use super::AutodiffError;

pub type NodeId = u32;

/// Operation recorded for a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    Add,
    Sub,
    Mul,
    Scale,
    Tanh,
    Exp,
    Sin,
    Cos,
    Pow,
    Affine,
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            OpKind::Leaf => "leaf",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::Scale => "scale",
            OpKind::Tanh => "tanh",
            OpKind::Exp => "exp",
            OpKind::Sin => "sin",
            OpKind::Cos => "cos",
            OpKind::Pow => "pow",
            OpKind::Affine => "affine",
        };
        f.write_str(name)
    }
}

/// The elementary operations exposed through [`Tape::elementary`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Elementary {
    Add,
    Mul,
    Tanh,
    Exp,
    Sin,
    Cos,
    /// Constant non-negative integer exponent.
    Pow(u32),
}

impl Elementary {
    fn arity(self) -> usize {
        match self {
            Elementary::Add | Elementary::Mul => 2,
            _ => 1,
        }
    }

    fn kind(self) -> OpKind {
        match self {
            Elementary::Add => OpKind::Add,
            Elementary::Mul => OpKind::Mul,
            Elementary::Tanh => OpKind::Tanh,
            Elementary::Exp => OpKind::Exp,
            Elementary::Sin => OpKind::Sin,
            Elementary::Cos => OpKind::Cos,
            Elementary::Pow(_) => OpKind::Pow,
        }
    }
}

/// First non-finite result produced on a tape.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fault {
    pub op: OpKind,
    pub primal: f64,
    pub d1: f64,
    pub d2: f64,
}

impl fmt::Display for Fault {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "non-finite result from `{}` (primal {}, d1 {}, d2 {})",
            self.op, self.primal, self.d1, self.d2
        )
    }
}

/// Raised when a sweep starts from a jet component that carries no tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepWarning {
    /// The selected derivative component was never seeded with an input
    /// direction, so it is identically zero.
    UnseededDerivative(Component),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sweep {
    pub gradient: Vec<f64>,
    pub warning: Option<SweepWarning>,
}

/// Append-only record of local partials, replayed backwards for adjoints.
///
/// The first `params` nodes are leaves standing for trainable parameters; a
/// sweep reports adjoints for exactly those. Every other node lists its parents
/// (all with smaller indices) and the local partial with respect to each.
pub struct Tape {
    ops: Vec<OpKind>,
    starts: Vec<u32>,
    parents: Vec<NodeId>,
    partials: Vec<f64>,
    params: usize,
    fault: Option<Fault>,
    tanh_slope_bias: f64,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new(0)
    }
}

impl Tape {
    pub fn new(params: usize) -> Self {
        let mut tape = Tape {
            ops: Vec::new(),
            starts: Vec::new(),
            parents: Vec::new(),
            partials: Vec::new(),
            params: 0,
            fault: None,
            tanh_slope_bias: 0.0,
        };
        tape.reset(params);
        tape
    }

    /// Drop every recorded node, keeping allocations, and register `params`
    /// parameter leaves.
    pub fn reset(&mut self, params: usize) {
        self.ops.clear();
        self.starts.clear();
        self.parents.clear();
        self.partials.clear();
        self.fault = None;
        self.params = params;
        self.starts.push(0);
    }

    /// Number of nodes, parameter leaves included.
    pub fn len(&self) -> usize {
        self.params + self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn param_count(&self) -> usize {
        self.params
    }

    pub fn op(&self, node: NodeId) -> OpKind {
        match (node as usize).checked_sub(self.params) {
            Some(i) => self.ops[i],
            None => OpKind::Leaf,
        }
    }

    /// Parents and local partials of a node.
    pub fn entries(&self, node: NodeId) -> impl Iterator<Item = (NodeId, f64)> + '_ {
        let (lo, hi) = match (node as usize).checked_sub(self.params) {
            Some(i) => (self.starts[i] as usize, self.starts[i + 1] as usize),
            None => (0, 0),
        };
        self.parents[lo..hi]
            .iter()
            .copied()
            .zip(self.partials[lo..hi].iter().copied())
    }

    pub fn fault(&self) -> Option<Fault> {
        self.fault
    }

    /// Fault-injection hook for harness self-tests: offsets the recorded local
    /// slope of every `tanh` by `bias` while leaving values untouched.
    #[doc(hidden)]
    pub fn set_tanh_slope_bias(&mut self, bias: f64) {
        self.tanh_slope_bias = bias;
    }

    /// Parameter `index` as a primal-only jet tracked by its leaf.
    #[inline]
    pub fn param(&self, index: usize, value: f64) -> DiffValue {
        debug_assert!(index < self.params);
        DiffValue {
            primal: value,
            d1: 0.0,
            d2: 0.0,
            nodes: [index as NodeId, NO_NODE, NO_NODE],
        }
    }

    /// Seed an input coordinate. `direction_weight` is the component of the
    /// differentiation direction along this coordinate.
    pub fn lift_input(&mut self, x: f64, direction_weight: f64) -> Result<DiffValue, AutodiffError> {
        if !x.is_finite() {
            return Err(AutodiffError::NonFiniteInput(x));
        }
        if !direction_weight.is_finite() {
            return Err(AutodiffError::NonFiniteInput(direction_weight));
        }
        let id = self.len() as NodeId;
        self.ops.push(OpKind::Leaf);
        self.starts.push(self.parents.len() as u32);
        Ok(DiffValue {
            primal: x,
            d1: direction_weight,
            d2: 0.0,
            nodes: [id, NO_NODE, NO_NODE],
        })
    }

    /// A jet computed elsewhere, entered as three independent leaves so a
    /// sweep reports the adjoint of each component.
    pub fn external(&mut self, primal: f64, d1: f64, d2: f64) -> DiffValue {
        let first = self.len() as NodeId;
        for _ in 0..3 {
            self.ops.push(OpKind::Leaf);
            self.starts.push(self.parents.len() as u32);
        }
        DiffValue {
            primal,
            d1,
            d2,
            nodes: [first, first + 1, first + 2],
        }
    }

    #[inline(always)]
    fn term(&mut self, node: NodeId, partial: f64) {
        if node != NO_NODE && partial != 0.0 {
            self.parents.push(node);
            self.partials.push(partial);
        }
    }

    #[inline(always)]
    fn seal(&mut self, op: OpKind) -> NodeId {
        let len = self.parents.len() as u32;
        if *self.starts.last().unwrap() == len {
            return NO_NODE;
        }
        let id = self.len() as NodeId;
        self.ops.push(op);
        self.starts.push(len);
        id
    }

    #[inline]
    fn finish(&mut self, op: OpKind, primal: f64, d1: f64, d2: f64, nodes: [NodeId; 3]) -> DiffValue {
        let out = DiffValue { primal, d1, d2, nodes };
        if self.fault.is_none() && !out.is_finite() {
            self.fault = Some(Fault { op, primal, d1, d2 });
        }
        out
    }

    /// Generic scalar function given its value and first three derivatives at
    /// `u.primal`.
    fn unary(&mut self, op: OpKind, u: DiffValue, f: [f64; 4]) -> DiffValue {
        let [f0, f1, f2, f3] = f;
        let [np, n1, n2] = u.nodes;
        let d1 = f1 * u.d1;
        let d2 = f2 * u.d1 * u.d1 + f1 * u.d2;

        let slope = if op == OpKind::Tanh { f1 + self.tanh_slope_bias } else { f1 };
        self.term(np, slope);
        let p = self.seal(op);

        self.term(np, f2 * u.d1);
        self.term(n1, f1);
        let q = self.seal(op);

        self.term(np, f3 * u.d1 * u.d1 + f2 * u.d2);
        self.term(n1, 2.0 * f2 * u.d1);
        self.term(n2, f1);
        let r = self.seal(op);

        self.finish(op, f0, d1, d2, [p, q, r])
    }

    pub fn tanh(&mut self, u: DiffValue) -> DiffValue {
        let t = u.primal.tanh();
        let s = 1.0 - t * t;
        self.unary(
            OpKind::Tanh,
            u,
            [t, s, -2.0 * t * s, -2.0 * s * (1.0 - 3.0 * t * t)],
        )
    }

    pub fn exp(&mut self, u: DiffValue) -> DiffValue {
        let e = u.primal.exp();
        self.unary(OpKind::Exp, u, [e, e, e, e])
    }

    pub fn sin(&mut self, u: DiffValue) -> DiffValue {
        let (s, c) = u.primal.sin_cos();
        self.unary(OpKind::Sin, u, [s, c, -s, -c])
    }

    pub fn cos(&mut self, u: DiffValue) -> DiffValue {
        let (s, c) = u.primal.sin_cos();
        self.unary(OpKind::Cos, u, [c, -s, -c, s])
    }

    /// `u^n` for a constant integer `n >= 0`.
    pub fn powi(&mut self, u: DiffValue, n: u32) -> DiffValue {
        let x = u.primal;
        let deriv = |k: u32| -> f64 {
            if k > n {
                return 0.0;
            }
            let falling: f64 = (0..k).map(|i| (n - i) as f64).product();
            falling * x.powi((n - k) as i32)
        };
        self.unary(OpKind::Pow, u, [deriv(0), deriv(1), deriv(2), deriv(3)])
    }

    pub fn add(&mut self, a: DiffValue, b: DiffValue) -> DiffValue {
        self.linear2(OpKind::Add, a, b, 1.0)
    }

    pub fn sub(&mut self, a: DiffValue, b: DiffValue) -> DiffValue {
        self.linear2(OpKind::Sub, a, b, -1.0)
    }

    fn linear2(&mut self, op: OpKind, a: DiffValue, b: DiffValue, sign: f64) -> DiffValue {
        let mut nodes = [NO_NODE; 3];
        for (c, slot) in nodes.iter_mut().enumerate() {
            self.term(a.nodes[c], 1.0);
            self.term(b.nodes[c], sign);
            *slot = self.seal(op);
        }
        self.finish(
            op,
            a.primal + sign * b.primal,
            a.d1 + sign * b.d1,
            a.d2 + sign * b.d2,
            nodes,
        )
    }

    pub fn mul(&mut self, a: DiffValue, b: DiffValue) -> DiffValue {
        let [ap, a1, a2] = a.nodes;
        let [bp, b1, b2] = b.nodes;

        self.term(ap, b.primal);
        self.term(bp, a.primal);
        let p = self.seal(OpKind::Mul);

        self.term(a1, b.primal);
        self.term(bp, a.d1);
        self.term(ap, b.d1);
        self.term(b1, a.primal);
        let q = self.seal(OpKind::Mul);

        self.term(a2, b.primal);
        self.term(bp, a.d2);
        self.term(a1, 2.0 * b.d1);
        self.term(b1, 2.0 * a.d1);
        self.term(ap, b.d2);
        self.term(b2, a.primal);
        let r = self.seal(OpKind::Mul);

        self.finish(
            OpKind::Mul,
            a.primal * b.primal,
            a.d1 * b.primal + a.primal * b.d1,
            a.d2 * b.primal + 2.0 * a.d1 * b.d1 + a.primal * b.d2,
            [p, q, r],
        )
    }

    /// Multiply by a constant.
    pub fn scale(&mut self, a: DiffValue, c: f64) -> DiffValue {
        if c == 1.0 {
            return a;
        }
        let mut nodes = [NO_NODE; 3];
        for (k, slot) in nodes.iter_mut().enumerate() {
            self.term(a.nodes[k], c);
            *slot = self.seal(OpKind::Scale);
        }
        self.finish(OpKind::Scale, c * a.primal, c * a.d1, c * a.d2, nodes)
    }

    /// Add a constant. Parameter dependence is unchanged, so no node is
    /// recorded.
    pub fn offset(&self, a: DiffValue, c: f64) -> DiffValue {
        DiffValue {
            primal: a.primal + c,
            ..a
        }
    }

    /// `Σ_j w_j·x_j + b` where the weights are the consecutive parameter leaves
    /// starting at `first_weight` and the bias is parameter `bias`.
    ///
    /// Equivalent to chaining `mul` and `add`, but records one node per jet
    /// component instead of one per product.
    pub fn affine_row(
        &mut self,
        weights: &[f64],
        first_weight: usize,
        inputs: &[DiffValue],
        bias: f64,
        bias_index: usize,
    ) -> DiffValue {
        debug_assert_eq!(weights.len(), inputs.len());
        let first = first_weight as NodeId;
        let mut primal = bias;
        let mut d1 = 0.0;
        let mut d2 = 0.0;

        for (j, (&w, x)) in weights.iter().zip(inputs).enumerate() {
            primal += w * x.primal;
            self.term(first + j as NodeId, x.primal);
            self.term(x.nodes[0], w);
        }
        self.term(bias_index as NodeId, 1.0);
        let p = self.seal(OpKind::Affine);

        for (j, (&w, x)) in weights.iter().zip(inputs).enumerate() {
            d1 += w * x.d1;
            self.term(first + j as NodeId, x.d1);
            self.term(x.nodes[1], w);
        }
        let q = self.seal(OpKind::Affine);

        for (j, (&w, x)) in weights.iter().zip(inputs).enumerate() {
            d2 += w * x.d2;
            self.term(first + j as NodeId, x.d2);
            self.term(x.nodes[2], w);
        }
        let r = self.seal(OpKind::Affine);

        self.finish(OpKind::Affine, primal, d1, d2, [p, q, r])
    }

    /// Dispatch an elementary operation by tag.
    pub fn elementary(&mut self, op: Elementary, args: &[DiffValue]) -> Result<DiffValue, AutodiffError> {
        if args.len() != op.arity() {
            return Err(AutodiffError::Arity {
                op: op.kind(),
                expected: op.arity(),
                got: args.len(),
            });
        }
        let out = match op {
            Elementary::Add => self.add(args[0], args[1]),
            Elementary::Mul => self.mul(args[0], args[1]),
            Elementary::Tanh => self.tanh(args[0]),
            Elementary::Exp => self.exp(args[0]),
            Elementary::Sin => self.sin(args[0]),
            Elementary::Cos => self.cos(args[0]),
            Elementary::Pow(n) => self.powi(args[0], n),
        };
        if !out.is_finite() {
            return Err(AutodiffError::NonFinite(self.fault.unwrap_or(Fault {
                op: op.kind(),
                primal: out.primal,
                d1: out.d1,
                d2: out.d2,
            })));
        }
        Ok(out)
    }

    /// Gradient of one jet component with respect to every parameter leaf.
    ///
    /// The tape itself is not modified, so repeated sweeps are allowed.
    pub fn reverse_sweep(&self, output: &DiffValue, select: Component) -> Sweep {
        let mut gradient = vec![0.0; self.params];
        let warning = match output.node(select) {
            Some(node) => {
                let mut adj = Vec::new();
                self.backprop(&[(node, 1.0)], &mut gradient, &mut adj);
                None
            }
            None if select != Component::Primal => Some(SweepWarning::UnseededDerivative(select)),
            None => None,
        };
        Sweep { gradient, warning }
    }

    /// Accumulate `Σ seed·∂node/∂θ` into `grad` for every parameter leaf.
    /// `adj` is scratch space, reused across calls; afterwards it holds the
    /// adjoints of the non-parameter nodes, read with [`Tape::adjoint`].
    pub fn backprop(&self, seeds: &[(NodeId, f64)], grad: &mut [f64], adj: &mut Vec<f64>) {
        let params = self.params;
        adj.clear();
        let Some(top) = seeds.iter().map(|&(n, _)| n as usize).max() else {
            return;
        };
        adj.resize((top + 1).saturating_sub(params), 0.0);
        for &(n, s) in seeds {
            match (n as usize).checked_sub(params) {
                Some(i) => adj[i] += s,
                None => grad[n as usize] += s,
            }
        }
        for i in (0..adj.len()).rev() {
            let a = adj[i];
            if a == 0.0 {
                continue;
            }
            let lo = self.starts[i] as usize;
            let hi = self.starts[i + 1] as usize;
            for (&p, &w) in self.parents[lo..hi].iter().zip(&self.partials[lo..hi]) {
                match (p as usize).checked_sub(params) {
                    Some(k) => adj[k] += w * a,
                    None => grad[p as usize] += w * a,
                }
            }
        }
    }

    /// Adjoint of `node` left in `adj` by the last [`Tape::backprop`];
    /// zero for parameter leaves and nodes the sweep never reached.
    pub fn adjoint(&self, adj: &[f64], node: NodeId) -> f64 {
        (node as usize).checked_sub(self.params).and_then(|i| adj.get(i)).copied().unwrap_or(0.0)
    }
}

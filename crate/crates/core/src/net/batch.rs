use super::{ActivationKind, ParamSet};

/// Activation value, its first three input derivatives and the scale
/// derivatives of the first three, at one pre-activation.
#[derive(Debug, Clone, Copy)]
struct Table {
    s: [f64; 4],
    b: [f64; 3],
}

#[inline(always)]
fn tanh_derivs(x: f64) -> [f64; 4] {
    let t = x.tanh();
    let s = 1.0 - t * t;
    [t, s, -2.0 * t * s, -2.0 * s * (1.0 - 3.0 * t * t)]
}

#[inline(always)]
fn table(kind: ActivationKind, z: f64, beta: f64) -> Table {
    match kind {
        ActivationKind::Tanh => Table { s: tanh_derivs(z), b: [0.0; 3] },
        ActivationKind::Stan { .. } => {
            let [t, t1, t2, t3] = tanh_derivs(z);
            Table {
                s: [t + beta * z * t, t1 + beta * (t + z * t1), t2 + beta * (2.0 * t1 + z * t2), t3 + beta * (3.0 * t2 + z * t3)],
                b: [z * t, t + z * t1, 2.0 * t1 + z * t2],
            }
        }
        ActivationKind::NLaaf { .. } => {
            let [t, t1, t2, t3] = tanh_derivs(beta * z);
            let b2 = beta * beta;
            Table {
                s: [t, beta * t1, b2 * t2, b2 * beta * t3],
                b: [z * t1, t1 + beta * z * t2, 2.0 * beta * t2 + b2 * z * t3],
            }
        }
    }
}

/// Forward state of one batch of points, kept for the backward pass.
///
/// Each jet component is stored point-major: entry `p * width + i` holds
/// neuron `i` at point `p`.
#[derive(Debug, Default, Clone)]
pub struct JetBatch {
    points: usize,
    comps: usize,
    /// Inputs of every layer; `acts[k]` feeds affine layer `k`, the last one
    /// holds the network output.
    acts: Vec<[Vec<f64>; 3]>,
    /// First and second pre-activation derivatives of the hidden layers.
    zs: Vec<[Vec<f64>; 2]>,
    /// Activation tables of the hidden layers, point-major like `acts`.
    tables: Vec<Vec<Table>>,
    adj: [Vec<f64>; 3],
    zadj: [Vec<f64>; 3],
    gbeta: Vec<f64>,
}

/// Row-major matrix view: `rows × cols` with the given strides.
#[derive(Clone, Copy)]
struct View {
    rows: usize,
    cols: usize,
    rs: usize,
    cs: usize,
}

impl View {
    fn dense(rows: usize, cols: usize) -> Self {
        View { rows, cols, rs: cols, cs: 1 }
    }

    fn t(self) -> Self {
        View { rows: self.cols, cols: self.rows, rs: self.cs, cs: self.rs }
    }

    fn span(self) -> usize {
        if self.rows == 0 || self.cols == 0 {
            0
        } else {
            (self.rows - 1) * self.rs + (self.cols - 1) * self.cs + 1
        }
    }
}

/// `c ← a·b + beta·c`.
fn gemm(a: &[f64], va: View, b: &[f64], vb: View, beta: f64, c: &mut [f64], vc: View) {
    assert!(va.cols == vb.rows && va.rows == vc.rows && vb.cols == vc.cols);
    assert!(a.len() >= va.span() && b.len() >= vb.span() && c.len() >= vc.span());
    if vc.rows == 0 || vc.cols == 0 {
        return;
    }
    // SAFETY: every index the kernel touches lies within the spans checked above,
    // and `c` is exclusively borrowed.
    unsafe {
        matrixmultiply::dgemm(
            va.rows,
            va.cols,
            vb.cols,
            1.0,
            a.as_ptr(),
            va.rs as isize,
            va.cs as isize,
            b.as_ptr(),
            vb.rs as isize,
            vb.cs as isize,
            beta,
            c.as_mut_ptr(),
            vc.rs as isize,
            vc.cs as isize,
        );
    }
}

fn reset(bufs: &mut [Vec<f64>], comps: usize, len: usize) {
    for (c, buf) in bufs.iter_mut().enumerate() {
        buf.clear();
        if c < comps {
            buf.resize(len, 0.0);
        }
    }
}

impl JetBatch {
    pub fn new() -> Self {
        Self::default()
    }

    /// Evaluate the network at `inputs` (row-major, `dims[0]` per point).
    ///
    /// With `direction = Some(d)` every output carries its first and second
    /// derivative along input coordinate `d`; with `None` only values are
    /// computed and the derivative components are zero.
    pub fn forward(&mut self, params: &ParamSet, activation: ActivationKind, inputs: &[f64], direction: Option<usize>) {
        let layout = params.layout();
        let dims = layout.dims();
        let depth = layout.depth();
        let n = inputs.len() / dims[0];
        let comps = if direction.is_some() { 3 } else { 1 };
        self.points = n;
        self.comps = comps;
        self.acts.resize_with(depth + 1, Default::default);
        self.zs.resize_with(depth.saturating_sub(1), Default::default);
        self.tables.resize_with(depth.saturating_sub(1), Default::default);

        let input = &mut self.acts[0];
        reset(input, comps, inputs.len());
        input[0].copy_from_slice(inputs);
        if let Some(d) = direction {
            for p in 0..n {
                input[1][p * dims[0] + d] = 1.0;
            }
        }

        let values = params.flat();
        for k in 0..depth {
            let (rows, cols) = (dims[k + 1], dims[k]);
            let w = params.weights(k);
            let b = params.biases(k);
            let (before, after) = self.acts.split_at_mut(k + 1);
            let a = &before[k];
            let out = &mut after[0];
            reset(out, comps, n * rows);
            for p in 0..n {
                out[0][p * rows..(p + 1) * rows].copy_from_slice(b);
            }
            let wt = View::dense(rows, cols).t();
            for c in 0..comps {
                gemm(&a[c], View::dense(n, cols), w, wt, 1.0, &mut out[c], View::dense(n, rows));
            }
            if k + 1 == depth {
                break;
            }
            let zs = &mut self.zs[k];
            let tables = &mut self.tables[k];
            tables.clear();
            tables.reserve(n * rows);
            if comps == 3 {
                zs[0].clear();
                zs[0].extend_from_slice(&out[1]);
                zs[1].clear();
                zs[1].extend_from_slice(&out[2]);
            }
            let betas: Vec<f64> = (0..rows).map(|i| layout.beta(k, i).map_or(0.0, |at| values[at])).collect();
            for p in 0..n {
                for (i, &beta) in betas.iter().enumerate() {
                    let at = p * rows + i;
                    let t = table(activation, out[0][at], beta);
                    out[0][at] = t.s[0];
                    if comps == 3 {
                        let (z1, z2) = (zs[0][at], zs[1][at]);
                        out[1][at] = t.s[1] * z1;
                        out[2][at] = t.s[2] * z1 * z1 + t.s[1] * z2;
                    }
                    tables.push(t);
                }
            }
        }
    }

    pub fn len(&self) -> usize {
        self.points
    }

    pub fn is_empty(&self) -> bool {
        self.points == 0
    }

    /// Output jet `(value, d1, d2)` of output `o` at point `p`.
    pub fn output(&self, p: usize, o: usize) -> [f64; 3] {
        let last = self.acts.last().expect("forward ran");
        let width = last[0].len() / self.points.max(1);
        let at = p * width + o;
        let get = |c: usize| if c < self.comps { last[c][at] } else { 0.0 };
        [get(0), get(1), get(2)]
    }

    /// Accumulate into `grad` the gradient of `Σ_p Σ_c seeds[p·m+o][c] · out_c(p, o)`.
    pub fn backward(&mut self, params: &ParamSet, seeds: &[[f64; 3]], grad: &mut [f64]) {
        let layout = params.layout();
        let dims = layout.dims();
        let depth = layout.depth();
        let (n, comps) = (self.points, self.comps);
        debug_assert_eq!(seeds.len(), n * dims[depth]);
        for c in 0..3 {
            self.adj[c].clear();
            if c < comps {
                self.adj[c].extend(seeds.iter().map(|s| s[c]));
            }
        }

        for k in (0..depth).rev() {
            let (rows, cols) = (dims[k + 1], dims[k]);
            // turn output adjoints of layer k into pre-activation adjoints
            if k + 1 < depth {
                let tables = &self.tables[k];
                let zs = &self.zs[k];
                reset(&mut self.zadj, comps, n * rows);
                self.gbeta.clear();
                self.gbeta.resize(rows, 0.0);
                for p in 0..n {
                    for i in 0..rows {
                        let at = p * rows + i;
                        let t = &tables[at];
                        let y0 = self.adj[0][at];
                        if comps == 1 {
                            self.zadj[0][at] = y0 * t.s[1];
                            self.gbeta[i] += y0 * t.b[0];
                        } else {
                            let (y1, y2) = (self.adj[1][at], self.adj[2][at]);
                            let (z1, z2) = (zs[0][at], zs[1][at]);
                            self.zadj[0][at] = y0 * t.s[1] + y1 * t.s[2] * z1 + y2 * (t.s[3] * z1 * z1 + t.s[2] * z2);
                            self.zadj[1][at] = y1 * t.s[1] + 2.0 * y2 * t.s[2] * z1;
                            self.zadj[2][at] = y2 * t.s[1];
                            self.gbeta[i] += y0 * t.b[0] + y1 * t.b[1] * z1 + y2 * (t.b[2] * z1 * z1 + t.b[1] * z2);
                        }
                    }
                }
                for (i, &g) in self.gbeta.iter().enumerate() {
                    if let Some(at) = layout.beta(k, i) {
                        grad[at] += g;
                    }
                }
                std::mem::swap(&mut self.adj, &mut self.zadj);
            }
            // self.adj now holds pre-activation adjoints of layer k
            let w = params.weights(k);
            let a = &self.acts[k];
            let w0 = layout.weight(k, 0, 0);
            let b0 = layout.bias(k, 0);
            let propagate = k > 0;
            reset(&mut self.zadj, if propagate { comps } else { 0 }, n * cols);
            let zv = View::dense(n, rows);
            for c in 0..comps {
                gemm(&self.adj[c], zv.t(), &a[c], View::dense(n, cols), 1.0, &mut grad[w0..w0 + rows * cols], View::dense(rows, cols));
                if propagate {
                    gemm(&self.adj[c], zv, w, View::dense(rows, cols), 0.0, &mut self.zadj[c], View::dense(n, cols));
                }
            }
            for p in 0..n {
                for (g, z) in grad[b0..b0 + rows].iter_mut().zip(&self.adj[0][p * rows..(p + 1) * rows]) {
                    *g += z;
                }
            }
            std::mem::swap(&mut self.adj, &mut self.zadj);
        }
    }
}

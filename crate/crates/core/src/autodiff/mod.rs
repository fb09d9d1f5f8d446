//! Second-order Taylor jets recorded on a reverse-mode tape.
//!
//! A [`DiffValue`] carries a value together with its first and second
//! derivatives along one input direction. Every component is also tracked on
//! the [`Tape`], so reverse sweeps can differentiate input derivatives (such as
//! `u_xx`) with respect to network parameters.

mod tape;
mod value;

pub use tape::{Elementary, Fault, NodeId, OpKind, Sweep, SweepWarning, Tape};
pub use value::{Component, DiffValue};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("input must be finite, got {0}")]
    NonFiniteInput(f64),
    #[error("`{op}` takes {expected} argument(s), got {got}")]
    Arity { op: OpKind, expected: usize, got: usize },
    #[error("{0}")]
    NonFinite(Fault),
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tanh_ref(x: f64) -> f64 {
        let (a, b) = (x.exp(), (-x).exp());
        (a - b) / (a + b)
    }

    #[test]
    fn lift_input_seeds_direction() {
        let mut tape = Tape::new(0);
        let x = tape.lift_input(3.0, 1.0).unwrap();
        assert_eq!((x.primal, x.d1, x.d2), (3.0, 1.0, 0.0));
        let y = tape.lift_input(0.5, 0.0).unwrap();
        assert_eq!((y.primal, y.d1, y.d2), (0.5, 0.0, 0.0));
        assert!(tape.lift_input(f64::NAN, 1.0).is_err());
        assert!(tape.lift_input(f64::INFINITY, 0.0).is_err());
    }

    #[test]
    fn square_has_second_derivative_two() {
        let mut tape = Tape::new(0);
        let x = tape.lift_input(-5.0, 1.0).unwrap();
        let y = tape.elementary(Elementary::Mul, &[x, x]).unwrap();
        assert_eq!(y.primal, 25.0);
        assert_eq!(y.d1, -10.0);
        assert_eq!(y.d2, 2.0);
    }

    #[test]
    fn tanh_and_sin_at_origin() {
        let mut tape = Tape::new(0);
        let x = tape.lift_input(0.0, 1.0).unwrap();
        let t = tape.tanh(x);
        assert_eq!((t.primal, t.d1, t.d2), (0.0, 1.0, 0.0));
        let s = tape.sin(x);
        assert_eq!((s.primal, s.d1, s.d2), (0.0, 1.0, 0.0));
    }

    #[test]
    fn tanh_slope_at_one_matches_central_difference() {
        let h = 1e-6;
        let fd = (tanh_ref(1.0 + h) - tanh_ref(1.0 - h)) / (2.0 * h);
        let mut tape = Tape::new(0);
        let x = tape.lift_input(1.0, 1.0).unwrap();
        let t = tape.tanh(x);
        assert!((t.d1 - fd).abs() < 1e-8);
        assert!((t.d1 - 0.41997).abs() < 1e-5);
    }

    #[test]
    fn derivative_of_input_derivative_wrt_parameter() {
        // d/dθ (d(θx)/dx) = 1
        let mut tape = Tape::new(1);
        let theta = tape.param(0, 2.5);
        let x = tape.lift_input(0.7, 1.0).unwrap();
        let y = tape.mul(theta, x);
        let sweep = tape.reverse_sweep(&y, Component::D1);
        assert_eq!(sweep.gradient, vec![1.0]);
        assert!(sweep.warning.is_none());
    }

    #[test]
    fn constant_output_has_zero_gradient() {
        let tape = Tape::new(3);
        let c = DiffValue::constant(4.0);
        let sweep = tape.reverse_sweep(&c, Component::Primal);
        assert_eq!(sweep.gradient, vec![0.0; 3]);
        assert!(sweep.warning.is_none());
    }

    #[test]
    fn unseeded_derivative_warns() {
        let mut tape = Tape::new(1);
        let theta = tape.param(0, 2.0);
        let x = tape.lift_input(0.7, 0.0).unwrap();
        let y = tape.mul(theta, x);
        let sweep = tape.reverse_sweep(&y, Component::D2);
        assert_eq!(sweep.gradient, vec![0.0]);
        assert_eq!(sweep.warning, Some(SweepWarning::UnseededDerivative(Component::D2)));
    }

    #[test]
    fn repeated_sweeps_are_bitwise_identical() {
        let mut tape = Tape::new(2);
        let a = tape.param(0, 0.3);
        let b = tape.param(1, -1.7);
        let x = tape.lift_input(0.9, 1.0).unwrap();
        let ax = tape.mul(a, x);
        let z = tape.add(ax, b);
        let t = tape.tanh(z);
        let s = tape.sin(t);
        let y = tape.mul(s, z);
        for c in [Component::Primal, Component::D1, Component::D2] {
            let g1 = tape.reverse_sweep(&y, c).gradient;
            let g2 = tape.reverse_sweep(&y, c).gradient;
            assert_eq!(
                g1.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                g2.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
            );
        }
    }

    /// A composite expression over every elementary op, parameterised by two
    /// leaves `p`.
    fn composite(tape: &mut Tape, x: DiffValue, p: [DiffValue; 2]) -> DiffValue {
        let px = tape.mul(p[0], x);
        let a = tape.tanh(px);
        let b = tape.sin(x);
        let half = tape.scale(x, 0.5);
        let c = tape.cos(half);
        let bc = tape.mul(b, c);
        let damped = tape.scale(bc, 0.3);
        let e = tape.exp(damped);
        let sq = tape.powi(a, 3);
        let s = tape.add(sq, e);
        let shifted = tape.add(s, p[1]);
        tape.mul(shifted, a)
    }

    fn eval_primal(x: f64, p: [f64; 2]) -> f64 {
        let mut tape = Tape::new(2);
        let ps = [tape.param(0, p[0]), tape.param(1, p[1])];
        composite(&mut tape, DiffValue::constant(x), ps).primal
    }

    fn eval_jet(x: f64, p: [f64; 2]) -> (Tape, DiffValue) {
        let mut tape = Tape::new(2);
        let ps = [tape.param(0, p[0]), tape.param(1, p[1])];
        let xv = tape.lift_input(x, 1.0).unwrap();
        let y = composite(&mut tape, xv, ps);
        (tape, y)
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1.0)
    }

    proptest! {
        #[test]
        fn jets_match_finite_differences(x in -2.0f64..2.0, p0 in -1.5f64..1.5, p1 in -1.0f64..1.0) {
            let p = [p0, p1];
            let (_, y) = eval_jet(x, p);
            let h1 = 1e-5;
            let fd1 = (eval_primal(x + h1, p) - eval_primal(x - h1, p)) / (2.0 * h1);
            let h2 = 1e-4;
            let fd2 = (eval_primal(x + h2, p) - 2.0 * eval_primal(x, p) + eval_primal(x - h2, p)) / (h2 * h2);
            prop_assert!(rel(y.d1, fd1) < 1e-6, "d1 {} vs {}", y.d1, fd1);
            prop_assert!(rel(y.d2, fd2) < 1e-4, "d2 {} vs {}", y.d2, fd2);
        }

        #[test]
        fn sweeps_match_parameter_finite_differences(x in -2.0f64..2.0, p0 in -1.5f64..1.5, p1 in -1.0f64..1.0) {
            let p = [p0, p1];
            let (tape, y) = eval_jet(x, p);
            for c in [Component::Primal, Component::D1, Component::D2] {
                let g = tape.reverse_sweep(&y, c).gradient;
                let h = if c == Component::Primal { 1e-6 } else { 1e-4 };
                for k in 0..2 {
                    let mut hi = p;
                    hi[k] += h;
                    let mut lo = p;
                    lo[k] -= h;
                    let fd = (eval_jet(x, hi).1.value(c) - eval_jet(x, lo).1.value(c)) / (2.0 * h);
                    let tol = if c == Component::Primal { 1e-6 } else { 1e-4 };
                    prop_assert!(rel(g[k], fd) < tol, "{:?} θ{}: {} vs {}", c, k, g[k], fd);
                }
            }
        }
    }
}

//! First-order and quasi-Newton minimisers over a flat parameter vector.

mod adam;
mod lbfgs;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use lbfgs::{lbfgs_step, LbfgsConfig, LbfgsState, LbfgsStep};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimError {
    #[error("gradient entry {index} is not finite ({value})")]
    NonFiniteGradient { index: usize, value: f64 },
    #[error("loss is not finite ({0})")]
    NonFiniteLoss(f64),
    #[error("parameter vector has {params} entries but gradient has {grad}")]
    LengthMismatch { params: usize, grad: usize },
}

//! Composite PINN losses, collocation sampling, the benchmark problems and
//! the training loop.

mod loss;
mod problem;
mod sampling;
mod train;

pub use loss::{beta_regularizer, evaluate_loss, evaluate_loss_with, LossReport, LossWorkspace, NetSurrogate, SampleSet};
pub use problem::{
    eval_along, heat_series_reference, linspace, make_problem, problem, DataPoint, DataSource, DerivativeTerm,
    ExactSolution, ExtraCoefficient, LossWeights, Point, ProblemName, ProblemSpec, Residual, Surrogate,
    HEAT_INITIAL_TEMPERATURE, HEAT_SERIES_TERMS, LOW_FREQUENCY_OMEGA,
};
pub use sampling::{sample_data, sample_residual_points, sample_set};
pub use train::{
    init_for_problem, test_metrics, train, Event, OptimizerChoice, TraceRow, TrainAbort, TrainOutcome, TrainPlan,
};

use thiserror::Error;

use crate::autodiff::AutodiffError;
use crate::net::NetError;
use crate::optim::OptimError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PinnError {
    #[error("unknown problem `{name}`; known problems: {known}")]
    UnknownProblem { name: String, known: String },
    #[error("invalid problem: {0}")]
    InvalidSpec(String),
    #[error("non-finite {what} at point {point:?}")]
    NonFinite { what: String, point: Point },
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Optim(#[from] OptimError),
}

//! Physics-informed neural networks with trainable activation scales.
//!
//! The crate is organised bottom-up:
//!
//! * [`autodiff`]: second-order Taylor jets on a reverse-mode tape.
//! * [`net`]: multilayer networks with tanh, N-LAAF and Stan activations.
//! * [`optim`]: Adam and L-BFGS with a strong-Wolfe line search.
//! * [`pinn`]: benchmark problems, composite losses and the training loop.
//! * [`analysis`]: error metrics, saturation probe, stationarity certificate
//!   and finite-difference audits.
//! * [`cli`]: experiment configuration, runs, sweeps and aggregation.

pub mod analysis;
pub mod autodiff;
pub mod cli;
pub mod net;
pub mod optim;
pub mod pinn;

//! Scale invariance of normalized units, weight decay, and the effective
//! learning rates of common update rules.
//!
//! - [`normunits`]: BN, WN and LN units with gradients and the BN Hessian.
//! - [`objective`]: the L2-regularized objective of a single unit.
//! - [`optim`]: SGD, momentum, Nesterov, RMSProp, ADAM, normalized SGD, Newton.
//! - [`scalelab`]: effective learning rates, rescaled runs, the stochastic
//!   weight-norm model and exponent fits.
//! - [`exphost`]: small BN networks trained over `(eta, lambda)` grids.

pub mod error;
pub mod exphost;
pub mod normunits;
pub mod objective;
pub mod optim;
pub mod par;
pub mod rng;
pub mod scalelab;

pub use error::{Error, Result};
pub use par::Execution;

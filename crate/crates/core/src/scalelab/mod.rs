//! Effective learning rates, rescaled configurations, trajectory-equivalence
//! checks, the stochastic weight-norm model and log-log exponent fitting.

mod fit;
mod noise;
mod rescale;
mod sweep;

pub use fit::{fit_loglog_slope, LogLogFit};
pub use noise::{
    equilibrium_norm_closed_form, simulate_norm_dynamics, NoiseModel, NormSimulation, NormTrace,
};
pub use rescale::{
    check_trajectory_equivalence, effective_lr, rescaled_config, EquivalenceReport, StateScaling,
};
pub use sweep::{mean_stationary_norm, norm_exponent_sweep, ExponentSweep};

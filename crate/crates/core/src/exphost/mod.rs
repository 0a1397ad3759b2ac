//! Small-network experiments: a BN network trained over learning-rate and
//! weight-decay grids, with CSV and plot-data output.

pub mod config;
pub mod csv;
pub mod dataset;
pub mod net;
pub mod plot;
pub mod sweep;
pub mod train;

pub use csv::{emit_csv, parse_csv};
pub use dataset::{make_dataset, Dataset, DatasetSpec, Splits};
pub use net::{NetParams, NetSpec};
pub use plot::{emit_plot_data, Quantity};
pub use sweep::{
    fit_norm_exponent, fit_optimal_lr_exponent, lambda_spread, log_space, run_grid_sweep, select_optimal_lr, Grid,
    SweepCell, SweepTable,
};
pub use train::{train_small_net, RunRecord, TrainConfig};

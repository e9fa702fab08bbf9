//! Monte Carlo sweeps: configuration, metrics, the trial runner and result files.

pub mod config;
pub mod golden;
pub mod metrics;
pub mod output;
pub mod runner;
pub mod validate;

pub use config::{AlgoSelection, ExperimentConfig, SweepPoint};
pub use metrics::{nmse_db, spectral_efficiency};
pub use output::{emit_results, read_csv, AlgoLabel, Manifest, Metric, ResultRow};
pub use runner::{run_montecarlo, run_montecarlo_with, trial_seed, RunOptions, RunOutput};

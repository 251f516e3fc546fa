//! Experiment runner: training, batch rollouts, budget sweeps and reports.
//!
//! Every command is a library function taking a resolved [`Experiment`], so
//! tests can drive them in-process; the `disco` binary only parses flags and
//! maps [`CliError`] to exit codes.

pub mod cli;
pub mod config;
pub mod error;
pub mod report;
pub mod runner;
pub mod stats;
pub mod svg;
pub mod train;

pub use config::{DenoiserChoice, Experiment, ExperimentConfig, Job, Purpose, TrainSettings};
pub use error::{CliError, CliResult, EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME};
pub use report::cmd_report;
pub use runner::{cmd_rollout, cmd_sweep, run_rollout, run_sweep, RolloutOutput, SweepOutput, SweepPoint, TaskSummary};
pub use train::cmd_train;

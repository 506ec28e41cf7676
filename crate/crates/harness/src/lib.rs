//! Experiment plumbing around `dreal-core`: configuration files, datasets,
//! metric logs, checkpoints, attention snapshots, plots and the `dreal`
//! command line.

pub mod ablate;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
mod error;
pub mod metrics;
pub mod plots;
pub mod run;
pub mod selftest;
pub mod snapshot;

pub use cli::cli_main;
pub use config::{load_config, ExperimentConfig};
pub use error::{Error, Result};
pub use run::{run_experiment, RunOptions, RunOutcome};

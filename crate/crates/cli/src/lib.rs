//! Experiment driver behind the `gscoop` binary: configuration, the `run`,
//! `train` and `export` subcommands, and their report formats.

pub mod config;
pub mod export;
pub mod report;
pub mod run;
pub mod train;

pub use config::{parse_modes, ExperimentConfig, Overrides};

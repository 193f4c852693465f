//! Experiment files, persistence and the subcommands behind the `ssac` binary.

pub mod commands;
pub mod config;
pub mod files;

pub use commands::{CommandError, CommonArgs};
pub use config::{ExperimentConfig, LoadedConfig};

//! Command pipeline around the `hyperqst` library: configuration, protocol
//! files, synthetic datasets, reconstruction reports and the replication
//! harness.

pub mod commands;
pub mod config;
pub mod error;
pub mod report;

pub use commands::Options;
pub use config::ExperimentConfig;
pub use error::{CliError, CliResult};

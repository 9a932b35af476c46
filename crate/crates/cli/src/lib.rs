//! Batch front end: `key=value` configs, command dispatch, run manifests.

pub mod config;
pub mod error;
pub mod manifest;
pub mod run;
pub mod verify;

pub use config::{parse_config, Command, ExperimentConfig};
pub use error::{CliError, CliResult};
pub use run::{run, RunOptions};

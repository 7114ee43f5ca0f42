//! Operator surface for echo state network language model runs: run
//! configuration, checkpoints, metrics logs and the command implementations
//! behind the `esnlm` binary.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;
pub mod metrics;

pub use checkpoint::Checkpoint;
pub use config::RunConfig;
pub use error::{CliError, Result};

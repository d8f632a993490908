//! Library side of the `relnas` binary: configuration, commands, errors.

pub mod commands;
pub mod config;
pub mod error;

pub use config::RunConfig;
pub use error::{CliError, Result};

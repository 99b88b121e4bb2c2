//! Command implementations behind the `nino` binary.

pub mod bench;
pub mod commands;
pub mod config;
pub mod error;
pub mod run;

pub use error::{CliError, CliResult};

//! Command-line front end: ingest, train, generate, eval, sweep, report.

pub mod commands;
pub mod config;
pub mod error;
pub mod sweep;

pub use commands::{run, Cli};
pub use error::CliError;

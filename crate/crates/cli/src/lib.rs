//! Command-line front end: run configuration, on-disk formats and the
//! `randman-gen`, `train`, `eval`, `compare-grads`, `landscape` and `bench`
//! subcommands.

pub mod commands;
pub mod config;
pub mod error;
pub mod io;

pub use config::RunConfig;
pub use error::{CliError, CliResult};

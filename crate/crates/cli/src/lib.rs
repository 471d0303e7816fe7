//! Command-line driver for the three-stage pipeline. The `dser` binary is a
//! thin clap layer over [`commands`].

pub mod commands;
pub mod config;
pub mod error;
pub mod io;

pub use config::RunConfig;
pub use error::{CliError, CliResult};

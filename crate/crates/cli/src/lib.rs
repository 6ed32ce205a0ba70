//! Command layer of the `skyfed` binary: run configuration, CSV outputs and
//! the three commands.

pub mod commands;
pub mod config;
pub mod csvio;
pub mod error;

pub use commands::{cmd_bench_zk, cmd_optimize, cmd_simulate, Arms};
pub use config::RunConfig;
pub use error::CliError;

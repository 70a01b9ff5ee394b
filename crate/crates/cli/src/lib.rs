//! Library half of the `lalr` binary: config parsing and command bodies.

pub mod commands;
pub mod config;

pub use commands::{CliError, Common, SeedArg};
pub use config::{CliConfig, ConfigError};

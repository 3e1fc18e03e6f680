//! Command-line front end: scenario files, subcommands and output formats.

pub mod commands;
pub mod config;
pub mod error;
pub mod verify;

pub use commands::{run, Cli};
pub use config::{emit_config, parse_config, parse_config_str};
pub use error::{exit, CliError};

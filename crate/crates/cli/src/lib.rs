//! Command surface of the `retinexdual` binary.

pub mod args;
pub mod commands;
pub mod error;
pub mod tiling;

pub use args::{Cli, Command};
pub use commands::run;
pub use error::{CliError, CliResult};

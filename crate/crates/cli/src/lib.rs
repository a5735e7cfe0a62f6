//! Config parsing, checkpoints and the `train` / `sample` / `eval` commands
//! behind the `bcgan` binary.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;
pub mod output;

pub use error::{CliError, Result};

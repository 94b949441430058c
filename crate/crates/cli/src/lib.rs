//! Command-line front end and file formats for thermobnn: checkpoints,
//! datasets, encoded planes and ADC threshold tables.

pub mod args;
pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod dataset;
mod error;
pub mod fsutil;
pub mod planes;

pub use error::{CliError, CliResult, EXIT_DATA, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE};

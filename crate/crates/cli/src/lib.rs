//! Command-line orchestration of the segmentation pipeline.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;

pub use commands::{run, run_all, STAGES};
pub use config::{Overrides, PipelineConfig};
pub use error::{CliError, CliResult};

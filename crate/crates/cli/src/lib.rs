//! Command-line orchestration of the data generation, training and
//! optimization workflows.

pub mod cli;
pub mod commands;
pub mod config;
pub mod error;

pub use cli::run;
pub use config::PipelineConfig;
pub use error::CliError;

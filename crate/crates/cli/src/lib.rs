//! Experiment runner for self-calibrated prompt tuning on synthetic data.

pub mod commands;
pub mod config;
pub mod error;
pub mod gradcheck;
pub mod pipeline;
pub mod report;

pub use config::ExperimentConfig;
pub use error::CliError;

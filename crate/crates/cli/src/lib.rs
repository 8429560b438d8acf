//! Command-line orchestration of the analyses: training the toy models,
//! regional attribution, component extraction and report comparison.
//!
//! Every run writes a self-contained JSON report (config, seeds, results)
//! and records it in the output directory's `index.json`.

pub mod commands;
pub mod config;
pub mod error;
pub mod render;
pub mod report;

pub use config::Config;
pub use error::{CliError, Result};

//! Experiment harness around `punctlab-core`: TOML configs, CSV metrics,
//! aggregation, SVG charts, checkpoint files and the `punctlab` CLI.

pub mod aggregate;
pub mod chart;
pub mod checkpoint;
pub mod cli;
pub mod config;
mod error;
pub mod records;

pub use error::{LabError, Result};

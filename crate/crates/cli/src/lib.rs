//! Batch front-end for the ecgfreq pipeline.
//!
//! Each stage reads the artifacts of the previous one from a fixed
//! directory layout (see [`layout`]) and fails with exit code 3 when they
//! are missing.

pub mod config;
pub mod error;
pub mod layout;
pub mod stages;
pub mod synth;

pub use config::{load_config, ExperimentConfig, Overrides, LoadedConfig};
pub use error::{CliError, CliResult};
pub use layout::Layout;
pub use stages::{Pipeline, Selection};

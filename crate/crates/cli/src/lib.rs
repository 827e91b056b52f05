//! Command-line front end for the fedsel-core pipeline.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;
pub mod presets;
pub mod report;

pub use error::CliError;

//! Command-line front end for the `cdcov` estimators: configuration
//! resolution, run manifests, and table rendering.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;
pub mod render;

pub use commands::{execute, Command};
pub use error::CliError;
pub use manifest::RunManifest;

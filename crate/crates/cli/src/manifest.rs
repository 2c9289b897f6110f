use std::fs;
use std::path::Path;

use cdcov::RngSeed;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Record of one CLI run. Passing it back as `--config` re-runs the command
/// with identical parameters; every artifact is a pure function of `config`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: Map<String, Value>,
    pub seed: Option<RngSeed>,
    pub started: String,
    pub finished: String,
    /// Output files, relative to the output directory.
    pub artifacts: Vec<String>,
    pub version: String,
    pub threads: usize,
}

impl RunManifest {
    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(&path, text + "\n").map_err(CliError::io(path))
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(CliError::io(path))?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }
}

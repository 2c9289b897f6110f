//! Parameter resolution: config file values overridden by command-line flags.
//!
//! A config file is either a flat JSON object or a run manifest, in which case
//! its `config` object is used. Keys are checked against the target type, so a
//! misspelled key is reported by name.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::CliError;

/// Flat key/value view of a serializable value, skipping nulls.
pub fn to_map<T: Serialize>(value: &T) -> Result<Map<String, Value>, CliError> {
    match serde_json::to_value(value).map_err(|e| CliError::Usage(e.to_string()))? {
        Value::Object(m) => Ok(m.into_iter().filter(|(_, v)| !v.is_null()).collect()),
        other => Err(CliError::Usage(format!("expected a key/value map, got {other}"))),
    }
}

/// Read a config file. Returns the parameter map and, for manifests, the
/// command it was written by.
pub fn read_config_file(path: &Path) -> Result<(Map<String, Value>, Option<String>), CliError> {
    let text = fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let value: Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("{}: not valid JSON: {e}", path.display())))?;
    let Value::Object(mut map) = value else {
        return Err(CliError::Usage(format!("{}: expected a JSON object", path.display())));
    };
    if let (Some(Value::String(command)), Some(Value::Object(_))) = (map.get("command"), map.get("config")) {
        let command = command.clone();
        let Some(Value::Object(config)) = map.remove("config") else {
            unreachable!("checked above")
        };
        return Ok((config, Some(command)));
    }
    Ok((map, None))
}

/// Merge `flags` over `file` and deserialize, materializing defaults.
pub fn resolve<T: DeserializeOwned>(
    file: Map<String, Value>,
    flags: Map<String, Value>,
) -> Result<T, CliError> {
    let mut merged = file;
    merged.extend(flags);
    serde_json::from_value(Value::Object(merged)).map_err(|e| CliError::Usage(format!("config: {e}")))
}

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;

use crate::CliError;

/// Reads and parses a JSON config; any problem is a config error.
pub fn load<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("reading {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

pub fn write_err(e: compact_core::metrics::MetricsError) -> CliError {
    CliError::Run(e.to_string())
}

//! Flat JSON config files backing the command-line flags.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;

use crate::CliError;

/// Load and parse a config file; `deny_unknown_fields` on the target type
/// turns unknown keys into usage errors.
pub fn load<T: DeserializeOwned + Default>(path: Option<&PathBuf>) -> Result<T, CliError> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("bad config {}: {e}", path.display())))
}

/// First of (flag value, config value, default).
pub fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

/// Like [`pick`] but the value is required from flag or file.
pub fn required<T>(flag: Option<T>, file: Option<T>, name: &str) -> Result<T, CliError> {
    flag.or(file)
        .ok_or_else(|| CliError::Usage(format!("missing required --{name}")))
}

/// Validate that an input file exists before any compute runs.
pub fn check_input(path: &Path) -> Result<(), CliError> {
    if !path.is_file() {
        return Err(CliError::Usage(format!("input file {} does not exist", path.display())));
    }
    Ok(())
}

/// Validate that the output location is plausibly writable: its parent
/// directory must exist.
pub fn check_output(path: &Path) -> Result<(), CliError> {
    let parent = path.parent().filter(|p| !p.as_os_str().is_empty());
    if let Some(parent) = parent {
        if !parent.is_dir() {
            return Err(CliError::Usage(format!(
                "output directory {} does not exist",
                parent.display()
            )));
        }
    }
    Ok(())
}

/// Parse a comma-separated float list flag.
pub fn parse_float_list(text: &str, name: &str) -> Result<Vec<f64>, CliError> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| CliError::Usage(format!("cannot parse --{name} entry {s:?}")))
        })
        .collect()
}

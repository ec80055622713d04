//! Report writing helpers.

use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::{CliError, CliResult};

/// Writes a JSON report (pretty, trailing newline).
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::data(format!("serialize {}: {e}", path.display())))?;
    text.push('\n');
    write_text(path, &text)
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| CliError::data(format!("write {}: {e}", path.display())))
}

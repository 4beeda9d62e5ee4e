//! Report and CSV writers. Floats are written with Rust's shortest
//! round-trip formatting so that repeated runs are byte-identical.

use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::CliError;

pub fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<(), CliError> {
    fs::create_dir_all(dir)?;
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(dir.join(name), text)?;
    Ok(())
}

/// Writes `rows` with a header line.
pub fn write_csv<R: AsRef<[String]>>(dir: &Path, name: &str, header: &[&str], rows: &[R]) -> Result<(), CliError> {
    fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join(name))?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r.as_ref())?;
    }
    w.flush()?;
    Ok(())
}

/// Formats an optional value, empty when absent.
pub fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

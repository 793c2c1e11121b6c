//! CSV and JSON writers shared by all result types.
//!
//! Reals are written in shortest round-trip form, so files reload bit for
//! bit. Missing values are empty fields.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::error::Result;

/// Shortest decimal that parses back to the same `f64`.
pub fn real(v: f64) -> String {
    format!("{v:?}")
}

pub fn opt_real(v: Option<f64>) -> String {
    v.map(real).unwrap_or_default()
}

/// Writes a header and rows through the `csv` writer.
pub fn write_csv<W, I>(out: W, header: &[&str], rows: I) -> Result<()>
where
    W: Write,
    I: IntoIterator<Item = Vec<String>>,
{
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header).map_err(std::io::Error::from)?;
    for row in rows {
        w.write_record(&row).map_err(std::io::Error::from)?;
    }
    w.flush()?;
    Ok(())
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value).map_err(|e| crate::Error::Domain(format!("json encoding: {e}")))
}

/// Writes `bytes` to `path` through a temporary sibling and a rename, so a
/// failed run never leaves a truncated file behind.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = dir.join(format!(".{name}.partial"));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Renders CSV into memory.
pub fn csv_bytes<I>(header: &[&str], rows: I) -> Result<Vec<u8>>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let mut buf = Vec::new();
    write_csv(&mut buf, header, rows)?;
    Ok(buf)
}

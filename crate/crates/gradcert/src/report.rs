//! Report documents and atomic file output. Reports carry no timestamps, so
//! identical runs produce byte-identical files.

use std::io::Write;
use std::path::Path;

use serde::Serialize;
use serde_json::Value;

use crate::error::{AppError, AppResult};

pub const REPORT_FORMAT: &str = "gradcert-report";
pub const REPORT_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize)]
pub struct Report {
    pub format: &'static str,
    pub version: u32,
    pub tool_version: &'static str,
    pub command: String,
    pub seed: u64,
    pub scaling: &'static str,
    pub config: Value,
    pub results: Value,
}

impl Report {
    pub fn new(command: &str, seed: u64, config: Value, results: Value) -> Self {
        Report {
            format: REPORT_FORMAT,
            version: REPORT_VERSION,
            tool_version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            seed,
            scaling: crate::evaluate::SCALING,
            config,
            results,
        }
    }

    pub fn to_json(&self) -> AppResult<String> {
        serde_json::to_string_pretty(self).map_err(|e| AppError::Runtime(format!("report serialization: {e}")))
    }
}

/// Writes through a temporary file in the destination directory, so a failed
/// run never leaves a partial file behind.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> AppResult<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| AppError::output(path, e))?;
    tmp.write_all(bytes).map_err(|e| AppError::output(path, e))?;
    tmp.as_file().sync_all().map_err(|e| AppError::output(path, e))?;
    tmp.persist(path).map_err(|e| AppError::output(path, e.error))?;
    Ok(())
}

pub fn write_report(path: &Path, report: &Report) -> AppResult<()> {
    let mut text = report.to_json()?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn csv_bytes(header: &[&str], rows: &[Vec<String>]) -> AppResult<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let fail = |e: csv::Error| AppError::Runtime(format!("csv encoding: {e}"));
    w.write_record(header).map_err(fail)?;
    for r in rows {
        w.write_record(r).map_err(fail)?;
    }
    w.into_inner().map_err(|e| AppError::Runtime(format!("csv encoding: {e}")))
}

pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> AppResult<()> {
    write_atomic(path, &csv_bytes(header, rows)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_replaces_contents() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.json");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), b"two");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn missing_directory_is_an_output_error() {
        let err = write_atomic(Path::new("/nonexistent-dir/x/r.json"), b"x").unwrap_err();
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn csv_quotes_fields() {
        let b = csv_bytes(&["a", "b"], &[vec!["1".into(), "x,y".into()]]).unwrap();
        assert_eq!(String::from_utf8(b).unwrap(), "a,b\n1,\"x,y\"\n");
    }
}

//! Result tables, curve files and the run manifest.

use crate::error::{CliError, CliResult};
use serde::Serialize;
use std::path::{Path, PathBuf};

/// Written wherever a value is undefined, e.g. a quantile above the support.
pub const NULL_TOKEN: &str = "NA";

/// Shortest representation that parses back to the same value.
pub fn fmt_f(v: f64) -> String {
    format!("{v}")
}

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| NULL_TOKEN.to_string(), fmt_f)
}

pub fn parse_opt(s: &str) -> CliResult<Option<f64>> {
    if s == NULL_TOKEN {
        return Ok(None);
    }
    s.parse().map(Some).map_err(|_| CliError::Data(format!("bad number `{s}`")))
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io { path: path.display().to_string(), message: e.to_string() }
}

/// Column header and rows of one output table.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: Vec<String>) -> Self {
        Table { header, rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_path(path).map_err(|e| io_err(path, e))?;
        w.write_record(&self.header).map_err(|e| io_err(path, e))?;
        for r in &self.rows {
            w.write_record(r).map_err(|e| io_err(path, e))?;
        }
        w.flush().map_err(|e| io_err(path, e))
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        let mut r = csv::Reader::from_path(path).map_err(|e| io_err(path, e))?;
        let header = r.headers().map_err(|e| io_err(path, e))?.iter().map(str::to_string).collect();
        let rows = r
            .records()
            .map(|rec| rec.map(|x| x.iter().map(str::to_string).collect()).map_err(|e| io_err(path, e)))
            .collect::<CliResult<_>>()?;
        Ok(Table { header, rows })
    }

    pub fn column(&self, name: &str) -> CliResult<Vec<Option<f64>>> {
        let j = self.header.iter().position(|h| h == name).ok_or_else(|| CliError::MissingColumn(name.into()))?;
        self.rows.iter().map(|r| parse_opt(&r[j])).collect()
    }
}

/// Suffix for columns tied to a significance level, e.g. `0.05` → `95`.
pub fn level_tag(alpha: f64) -> String {
    fmt_f(((1.0 - alpha) * 1e6).round() / 1e4)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| io_err(path, e))?;
    s.push('\n');
    std::fs::write(path, s).map_err(|e| io_err(path, e))
}

pub fn ensure_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

/// File name stem safe for any outcome label.
pub fn file_stem(label: &str) -> String {
    label.chars().map(|c| if c.is_ascii_alphanumeric() || c == '_' || c == '-' { c } else { '_' }).collect()
}

pub fn out_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}

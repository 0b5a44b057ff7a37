//! Atomic file output, gates and run manifests.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

/// One acceptance check with its measured value.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Gate {
    pub name: String,
    pub passed: bool,
    pub measured: f64,
    pub threshold: String,
}

impl Gate {
    pub fn new(name: impl Into<String>, passed: bool, measured: f64, threshold: impl Into<String>) -> Self {
        Self { name: name.into(), passed, measured, threshold: threshold.into() }
    }

    /// Passes when `measured ≤ limit`.
    pub fn at_most(name: impl Into<String>, measured: f64, limit: f64) -> Self {
        Self::new(name, measured <= limit, measured, format!("<= {limit:e}"))
    }

    /// Passes when `lo ≤ measured ≤ hi`.
    pub fn within(name: impl Into<String>, measured: f64, lo: f64, hi: f64) -> Self {
        Self::new(name, (lo..=hi).contains(&measured), measured, format!("in [{lo}, {hi}]"))
    }
}

/// Output of one subcommand: the main data file, optional sidecars
/// (suffix, bytes), a free-form summary and gate results.
#[derive(Debug, Default)]
pub struct Outcome {
    pub data: Vec<u8>,
    pub sidecars: Vec<(String, Vec<u8>)>,
    pub summary: serde_json::Value,
    pub gates: Vec<Gate>,
    pub seeds: Vec<u64>,
}

/// Writes `bytes` to `path` through a temporary file in the same directory,
/// renamed into place only once complete.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    std::fs::create_dir_all(&dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(&dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

/// `path` with `suffix` appended to its file name.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(suffix);
    path.with_file_name(name)
}

pub fn schema_line(kind: &str) -> String {
    format!("#schema=fracpile.{kind}.v1\n")
}

/// Long-format CSV builder with a schema header.
pub struct Csv {
    buf: String,
}

impl Csv {
    pub fn new(kind: &str, columns: &[&str]) -> Self {
        let mut buf = schema_line(kind);
        buf.push_str(&columns.join(","));
        buf.push('\n');
        Self { buf }
    }

    pub fn row(&mut self, fields: &[String]) {
        let _ = writeln!(self.buf, "{}", fields.join(","));
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.buf.into_bytes()
    }
}

/// Shortest round-trip representation; empty for NaN.
pub fn num(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v:e}")
    }
}

/// Coordinates joined by `;` so they fit in one CSV field.
pub fn coords(c: &[i64]) -> String {
    c.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(";")
}

pub fn json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut v = serde_json::to_vec_pretty(value).expect("serializable output");
    v.push(b'\n');
    v
}

#[derive(Debug, Serialize)]
pub struct Manifest<'a> {
    pub schema: &'static str,
    pub command: &'a str,
    pub tool_version: &'static str,
    pub core_version: &'static str,
    pub config: serde_json::Value,
    pub seeds: &'a [u64],
    pub threads: usize,
    pub outputs: Vec<String>,
    pub gates: &'a [Gate],
    pub summary: &'a serde_json::Value,
    pub wall_time_seconds: f64,
}

//! CSV emission and run manifests.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColumnKind {
    Int,
    Real,
    Text,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Field {
    Int(i64),
    Real(f64),
    Text(String),
}

impl Field {
    fn kind(&self) -> ColumnKind {
        match self {
            Field::Int(_) => ColumnKind::Int,
            Field::Real(_) => ColumnKind::Real,
            Field::Text(_) => ColumnKind::Text,
        }
    }

    fn render(&self) -> String {
        match self {
            Field::Int(v) => v.to_string(),
            Field::Real(v) => format_real(*v),
            Field::Text(v) => v.clone(),
        }
    }
}

impl From<f64> for Field {
    fn from(v: f64) -> Self {
        Field::Real(v)
    }
}

impl From<usize> for Field {
    fn from(v: usize) -> Self {
        Field::Int(v as i64)
    }
}

impl From<i64> for Field {
    fn from(v: i64) -> Self {
        Field::Int(v)
    }
}

impl From<&str> for Field {
    fn from(v: &str) -> Self {
        Field::Text(v.to_string())
    }
}

/// 17 significant digits, enough to round-trip any `f64`.
pub fn format_real(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        v.to_string()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Schema {
    pub columns: Vec<(String, ColumnKind)>,
}

impl Schema {
    pub fn new(columns: &[(&str, ColumnKind)]) -> Self {
        Schema {
            columns: columns.iter().map(|(n, k)| (n.to_string(), *k)).collect(),
        }
    }

    /// Adds one column per axis, named `{prefix}1..{prefix}d`.
    pub fn with_axes(mut self, at: usize, prefix: &str, dim: usize, kind: ColumnKind) -> Self {
        let cols: Vec<_> = (1..=dim).map(|a| (format!("{prefix}{a}"), kind)).collect();
        self.columns.splice(at..at, cols);
        self
    }
}

/// Writes a header row and `rows`; every row must match the schema.
pub fn write_csv(rows: &[Vec<Field>], schema: &Schema, path: &Path) -> Result<()> {
    for (i, row) in rows.iter().enumerate() {
        if row.len() != schema.columns.len() {
            return Err(Error::internal(format!(
                "row {i} has {} fields, schema has {} columns",
                row.len(),
                schema.columns.len()
            )));
        }
        for (f, (name, kind)) in row.iter().zip(&schema.columns) {
            if f.kind() != *kind {
                return Err(Error::internal(format!(
                    "row {i}: column `{name}` expects {kind:?}, got {f:?}"
                )));
            }
        }
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(|e| Error::io(path, std::io::Error::other(e)))?;
    let io = |e: csv::Error| Error::io(path, std::io::Error::other(e));
    w.write_record(schema.columns.iter().map(|c| c.0.as_str()))
        .map_err(io)?;
    for row in rows {
        w.write_record(row.iter().map(Field::render)).map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Outcome of one tolerance check performed by a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckRecord {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub subcommand: String,
    pub master_seed: u64,
    pub started: String,
    pub finished: String,
    pub version: String,
    pub outputs: Vec<PathBuf>,
    pub checks: Vec<CheckRecord>,
}

/// Hex sha256 of the canonical config text.
pub fn config_hash(canonical: &str) -> String {
    let digest = Sha256::digest(canonical.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub const MANIFEST_SUFFIX: &str = ".manifest.json";

impl RunManifest {
    pub fn path_in(&self, dir: &Path) -> PathBuf {
        dir.join(format!("{}{MANIFEST_SUFFIX}", self.subcommand))
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = self.path_in(dir);
        let text =
            serde_json::to_string_pretty(self).map_err(|e| Error::internal(e.to_string()))?;
        fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))
    }
}

/// Every manifest in `dir`, sorted by file name.
pub fn read_manifests(dir: &Path) -> Result<Vec<RunManifest>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.to_string_lossy().ends_with(MANIFEST_SUFFIX))
        .collect();
    paths.sort();
    paths.iter().map(|p| RunManifest::read(p)).collect()
}

//! Result tables, JSON summary and run manifest on disk.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// A CSV table whose first column is an integer index.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub index_name: String,
    pub columns: Vec<String>,
    pub rows: Vec<(usize, Vec<f64>)>,
}

impl Table {
    pub fn new(index_name: &str, columns: &[&str]) -> Self {
        Self {
            index_name: index_name.to_string(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    /// Header row plus one line per row; floats carry 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(&self.index_name);
        for c in &self.columns {
            out.push(',');
            out.push_str(c);
        }
        out.push('\n');
        for (idx, vals) in &self.rows {
            let _ = write!(out, "{idx}");
            for v in vals {
                let _ = write!(out, ",{}", fmt_float(*v));
            }
            out.push('\n');
        }
        out
    }

    /// Long format `index,metric,value`.
    pub fn to_long_csv(&self) -> String {
        let mut out = format!("{},metric,value\n", self.index_name);
        for (idx, vals) in &self.rows {
            for (c, v) in self.columns.iter().zip(vals) {
                let _ = writeln!(out, "{idx},{c},{}", fmt_float(*v));
            }
        }
        out
    }
}

pub fn fmt_float(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        format!("{v}")
    }
}

/// Everything an experiment produces besides the manifest.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExperimentOutput {
    /// Per-path metrics, written to `paths.csv` and `metrics_long.csv`.
    pub paths: Table,
    pub summary: serde_json::Value,
    /// Additional tables by file name.
    pub extra: Vec<(String, Table)>,
}

/// Provenance of a run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub version: String,
    pub timestamp: String,
    pub complete: bool,
    pub error: Option<String>,
    /// SHA-256 of each written file, by file name.
    pub files: BTreeMap<String, String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn write_file(dir: &Path, name: &str, bytes: &[u8]) -> Result<String> {
    let path = dir.join(name);
    std::fs::write(&path, bytes).map_err(|source| Error::Io { path: path.clone(), source })?;
    Ok(sha256_hex(bytes))
}

/// Write all tables, the summary and the manifest into `dir`.
pub fn write_results(output: &ExperimentOutput, manifest: &mut RunManifest, dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Io { path: dir.to_path_buf(), source })?;
    let mut files = BTreeMap::new();
    files.insert("paths.csv".to_string(), write_file(dir, "paths.csv", output.paths.to_csv().as_bytes())?);
    files.insert(
        "metrics_long.csv".to_string(),
        write_file(dir, "metrics_long.csv", output.paths.to_long_csv().as_bytes())?,
    );
    for (name, table) in &output.extra {
        files.insert(name.clone(), write_file(dir, name, table.to_csv().as_bytes())?);
    }
    let summary = serde_json::to_string_pretty(&output.summary).expect("summary serializes") + "\n";
    files.insert("summary.json".to_string(), write_file(dir, "summary.json", summary.as_bytes())?);
    manifest.files = files;
    let text = serde_json::to_string_pretty(manifest).expect("manifest serializes") + "\n";
    let path = dir.join("manifest.json");
    std::fs::write(&path, text).map_err(|source| Error::Io { path: path.clone(), source })?;
    Ok(path)
}

//! Artifact rendering and the run manifest.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::hex_digest;

/// Columnar numeric data with `#`-prefixed metadata lines. Rows may carry
/// a text label, rendered as an extra first column.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub file_name: String,
    pub meta: Vec<(String, String)>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub label_column: Option<String>,
    pub labels: Vec<String>,
}

impl Table {
    pub fn new(file_name: &str, columns: &[&str]) -> Self {
        Table {
            file_name: file_name.to_string(),
            meta: Vec::new(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
            label_column: None,
            labels: Vec::new(),
        }
    }

    pub fn labelled(mut self, label_column: &str) -> Self {
        self.label_column = Some(label_column.to_string());
        self
    }

    pub fn push_labelled(&mut self, label: &str, row: Vec<f64>) {
        self.labels.push(label.to_string());
        self.push(row);
    }

    pub fn meta(mut self, key: &str, value: impl ToString) -> Self {
        self.meta.push((key.to_string(), value.to_string()));
        self
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[j]).collect())
    }

    /// Tab-separated text. Numbers use the shortest representation that
    /// parses back to the same `f64`.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.meta {
            let _ = writeln!(out, "# {k}: {v}");
        }
        if let Some(label) = &self.label_column {
            out.push_str(label);
            out.push('\t');
        }
        out.push_str(&self.columns.join("\t"));
        out.push('\n');
        for (i, row) in self.rows.iter().enumerate() {
            if self.label_column.is_some() {
                out.push_str(&self.labels[i]);
                out.push('\t');
            }
            let cells: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
            out.push_str(&cells.join("\t"));
            out.push('\n');
        }
        out
    }
}

/// One written file as recorded in the manifest.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FileRecord {
    pub name: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub scenario: String,
    pub config_hash: String,
    pub root_seed: u64,
    pub passed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_clock_s: Option<f64>,
    pub seeds: toml::Table,
    pub summary: toml::Table,
    pub files: Vec<FileRecord>,
}

pub const MANIFEST_NAME: &str = "manifest.toml";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex_digest(bytes)
}

/// Writes files into `dir`, removing everything it wrote if any write
/// fails.
pub struct ArtifactWriter {
    dir: PathBuf,
    written: Vec<PathBuf>,
    records: Vec<FileRecord>,
}

impl ArtifactWriter {
    pub fn create(dir: &Path) -> std::io::Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(ArtifactWriter { dir: dir.to_path_buf(), written: Vec::new(), records: Vec::new() })
    }

    pub fn write(&mut self, name: &str, contents: &str) -> std::io::Result<()> {
        let path = self.dir.join(name);
        let result = fs::write(&path, contents);
        if path.exists() {
            self.written.push(path);
        }
        result?;
        self.records.push(FileRecord {
            name: name.to_string(),
            bytes: contents.len() as u64,
            sha256: sha256_hex(contents.as_bytes()),
        });
        Ok(())
    }

    pub fn records(&self) -> &[FileRecord] {
        &self.records
    }

    /// Deletes every file written so far.
    pub fn discard(self) {
        for p in self.written {
            let _ = fs::remove_file(p);
        }
    }
}

pub fn render_manifest(m: &Manifest) -> String {
    toml::to_string(m).expect("manifest serializes")
}

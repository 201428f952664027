//! CSV documents and JSON run manifests.
//!
//! CSV cells use Rust's shortest-round-trip float formatting, so identical
//! bits render identically and a re-run reproduces every output byte.
//! Infeasible cells render empty rather than being omitted.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

/// Schema tag written as the first line of every CSV.
pub const CSV_SCHEMA: &str = "srp-csv v1";

/// Manifest schema tag.
pub const MANIFEST_SCHEMA: &str = "srp-manifest v1";

/// One CSV document: a version comment, a column header, and rows.
#[derive(Debug, Clone)]
pub struct CsvDoc {
    verb: &'static str,
    columns: &'static [&'static str],
    rows: Vec<Vec<String>>,
}

impl CsvDoc {
    pub fn new(verb: &'static str, columns: &'static [&'static str]) -> Self {
        Self {
            verb,
            columns,
            rows: Vec::new(),
        }
    }

    pub fn push_row(&mut self, cells: Vec<String>) {
        debug_assert_eq!(cells.len(), self.columns.len());
        self.rows.push(cells);
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn render(&self) -> String {
        let mut s = format!("# {CSV_SCHEMA} verb={}\n{}\n", self.verb, self.columns.join(","));
        for row in &self.rows {
            s.push_str(&row.join(","));
            s.push('\n');
        }
        s
    }

    /// Write to `path`, or stdout when `path` is `None`.
    pub fn write(&self, path: Option<&Path>) -> io::Result<()> {
        match path {
            Some(p) => fs::write(p, self.render()),
            None => io::stdout().write_all(self.render().as_bytes()),
        }
    }
}

/// Format a float cell; non-finite values render empty (infeasible).
pub fn cell(x: f64) -> String {
    if x.is_finite() {
        format!("{x}")
    } else {
        String::new()
    }
}

/// Format an optional float cell.
pub fn cell_opt(x: Option<f64>) -> String {
    x.map(cell).unwrap_or_default()
}

/// Everything needed to audit and re-run one invocation.
#[derive(Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema: String,
    pub tool_version: String,
    pub verb: String,
    /// Canonical argument vector with all defaults materialized; running
    /// `srp <argv…>` again reproduces the CSV bytes.
    pub argv: Vec<String>,
    pub seed: u64,
    pub threads: Option<usize>,
    pub rows: usize,
    /// Raised feasibility/agreement flags (empty on a clean run).
    pub flags: Vec<String>,
    /// Route that produced each row's numbers, in row order.
    pub row_routes: Vec<String>,
    /// CSV paths written ("-" for stdout).
    pub outputs: Vec<String>,
    pub wall_clock_ms: u128,
}

impl RunManifest {
    pub fn write(&self, path: &Path) -> io::Result<()> {
        let json = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(path, json)
    }
}

/// Derive the histogram side-CSV path from the main output path.
pub fn histogram_sibling(out: &Path) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    out.with_file_name(format!("{stem}_hist.csv"))
}

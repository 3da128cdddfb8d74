//! Delimited-text tables and run manifests.
//!
//! Every numeric output is a CSV table whose header cells carry the column
//! unit in brackets (`lambda [L^-2]`; `L` is the period length, `1` marks
//! dimensionless columns). Floats are written in Rust's shortest round-trip
//! form, so identical runs produce byte-identical files.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::Config;
use crate::error::Result;
use crate::mesh::MeshStats;

/// A single table cell.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Float(f64),
    Int(i64),
    Text(String),
}

impl From<f64> for Value {
    fn from(v: f64) -> Self {
        Value::Float(v)
    }
}

impl From<usize> for Value {
    fn from(v: usize) -> Self {
        Value::Int(v as i64)
    }
}

impl From<i64> for Value {
    fn from(v: i64) -> Self {
        Value::Int(v)
    }
}

impl From<bool> for Value {
    fn from(v: bool) -> Self {
        Value::Text(v.to_string())
    }
}

impl From<&str> for Value {
    fn from(v: &str) -> Self {
        Value::Text(v.to_string())
    }
}

impl From<String> for Value {
    fn from(v: String) -> Self {
        Value::Text(v)
    }
}

impl Value {
    fn render(&self) -> String {
        match self {
            Value::Float(v) => format!("{v:e}"),
            Value::Int(v) => v.to_string(),
            Value::Text(s) => s.clone(),
        }
    }
}

/// A named table with unit-annotated columns.
#[derive(Debug, Clone)]
pub struct Table {
    pub name: String,
    pub columns: Vec<(String, String)>,
    pub rows: Vec<Vec<Value>>,
}

impl Table {
    pub fn new(name: &str, columns: &[(&str, &str)]) -> Self {
        Table {
            name: name.to_string(),
            columns: columns.iter().map(|(n, u)| (n.to_string(), u.to_string())).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Value>) {
        assert_eq!(row.len(), self.columns.len(), "row width does not match table {}", self.name);
        self.rows.push(row);
    }

    pub fn header(&self) -> Vec<String> {
        self.columns.iter().map(|(n, u)| format!("{n} [{u}]")).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(self.header()).expect("in-memory write");
        for row in &self.rows {
            w.write_record(row.iter().map(Value::render)).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is UTF-8")
    }
}

/// Key/value summary of a run (a two-column table in spirit, but kept as a
/// sorted map so it serializes to stable TOML).
pub type Summary = BTreeMap<String, String>;

#[derive(Debug, Clone, Serialize)]
pub struct MeshSummary {
    pub nodes: usize,
    pub elements: usize,
    pub trace_nodes: usize,
    pub unknowns: usize,
    pub max_diameter: f64,
    pub min_quality: f64,
}

impl MeshSummary {
    pub fn new(stats: &MeshStats, unknowns: usize) -> Self {
        MeshSummary {
            nodes: stats.n_nodes,
            elements: stats.n_elements,
            trace_nodes: stats.n_trace_nodes,
            unknowns,
            max_diameter: stats.max_diameter,
            min_quality: stats.min_quality,
        }
    }
}

/// Manifest written next to every set of reports. Wall-clock timings are
/// kept out of it (they go to `timings.csv`) so that the manifest itself is
/// reproducible bit for bit.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config_hash: String,
    /// No randomized algorithm is used anywhere in the pipeline.
    pub deterministic: bool,
    pub threads: usize,
    pub mesh: Option<MeshSummary>,
    /// Quadrature node counts per stage.
    pub quadrature_nodes: BTreeMap<String, usize>,
    pub outputs: Vec<String>,
    pub summary: Summary,
    /// The fully resolved configuration, including every default in use.
    pub config: Config,
}

impl RunManifest {
    pub fn new(command: &str, config: &Config) -> Self {
        RunManifest {
            tool: "waveguide".to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            config_hash: config.hash(),
            deterministic: true,
            threads: rayon::current_num_threads(),
            mesh: None,
            quadrature_nodes: BTreeMap::new(),
            outputs: Vec::new(),
            summary: Summary::new(),
            config: config.clone(),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest is always serializable")
    }
}

/// Collects the files of one run and writes them into an output directory.
#[derive(Debug)]
pub struct ReportWriter {
    dir: PathBuf,
    pub manifest: RunManifest,
    tables: Vec<(String, String)>,
    timings: Vec<(String, f64)>,
}

impl ReportWriter {
    pub fn new(dir: &Path, manifest: RunManifest) -> Self {
        ReportWriter { dir: dir.to_path_buf(), manifest, tables: Vec::new(), timings: Vec::new() }
    }

    pub fn table(&mut self, table: &Table) {
        self.raw(&format!("{}.csv", table.name), table.to_csv());
    }

    /// Adds a file with arbitrary text content (mesh listings, matrices).
    pub fn raw(&mut self, file: &str, content: String) {
        self.manifest.outputs.push(file.to_string());
        self.tables.push((file.to_string(), content));
    }

    pub fn timing(&mut self, stage: &str, seconds: f64) {
        self.timings.push((stage.to_string(), seconds));
    }

    pub fn summary(&mut self, key: &str, value: impl Into<Value>) {
        self.manifest.summary.insert(key.to_string(), value.into().render());
    }

    pub fn finish(self) -> Result<PathBuf> {
        fs::create_dir_all(&self.dir)?;
        for (file, content) in &self.tables {
            fs::write(self.dir.join(file), content)?;
        }
        let mut t = Table::new("timings", &[("stage", "-"), ("seconds", "s")]);
        for (stage, s) in &self.timings {
            t.push(vec![stage.as_str().into(), (*s).into()]);
        }
        fs::write(self.dir.join("timings.csv"), t.to_csv())?;
        fs::write(self.dir.join("manifest.toml"), self.manifest.to_toml())?;
        Ok(self.dir)
    }
}

/// Dense complex matrix as plain text: one row per line, `re im` pairs.
pub fn matrix_text(m: &nalgebra::DMatrix<num_complex::Complex64>) -> String {
    let mut s = String::new();
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| format!("{:e} {:e}", m[(i, j)].re, m[(i, j)].im)).collect();
        s.push_str(&row.join(" "));
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_header_carries_units() {
        let mut t = Table::new("bands", &[("p", "L^-1"), ("band", "1"), ("note", "-")]);
        t.push(vec![0.5.into(), 3usize.into(), "a,b".into()]);
        let text = t.to_csv();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("p [L^-1],band [1],note [-]"));
        assert_eq!(lines.next(), Some("5e-1,3,\"a,b\""));
    }

    #[test]
    fn floats_round_trip_exactly() {
        for v in [0.1, 1.0 / 3.0, 217.77279573487175, -1e-300, f64::MIN_POSITIVE] {
            let r = Value::Float(v).render();
            assert_eq!(r.parse::<f64>().unwrap().to_bits(), v.to_bits());
        }
    }

    #[test]
    fn manifest_serializes_with_config_echo() {
        let cfg = Config::default();
        let m = RunManifest::new("dirac", &cfg);
        let text = m.to_toml();
        assert!(text.contains(&cfg.hash()));
        assert!(text.contains("[config.search]"));
    }
}

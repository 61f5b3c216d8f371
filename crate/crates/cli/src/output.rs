use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::SystemTime;

use cat_ifm::exact::ExperimentConfig;
use cat_ifm::stats::PhiGrid;
use serde::Serialize;

use crate::error::CliError;

/// A CSV cell.
#[derive(Clone, Debug)]
pub enum Cell {
    Num(f64),
    Int(u64),
    Text(&'static str),
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Num(x) => format_float(*x),
            Cell::Int(n) => n.to_string(),
            Cell::Text(s) => (*s).to_string(),
        }
    }
}

/// 17 significant digits; `inf`, `-inf` and `nan` for non-finite values.
pub fn format_float(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{x:.16e}")
    }
}

#[derive(Clone, Debug)]
pub struct Table {
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(header: &[&'static str]) -> Self {
        Table {
            header: header.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_path(path)
            .map_err(|e| io_error(path, e))?;
        w.write_record(&self.header)?;
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::render))?;
        }
        w.flush().map_err(|e| CliError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Ok(())
    }
}

fn io_error(path: &Path, e: csv::Error) -> CliError {
    match e.into_kind() {
        csv::ErrorKind::Io(source) => CliError::Io {
            path: path.display().to_string(),
            source,
        },
        other => CliError::Usage(format!("{}: {other:?}", path.display())),
    }
}

/// One cross-check performed under `--verify`.
#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl Check {
    /// Passes when `value ≤ tolerance`.
    pub fn at_most(name: impl Into<String>, value: f64, tolerance: f64) -> Self {
        Check {
            name: name.into(),
            value,
            tolerance,
            passed: value <= tolerance,
        }
    }
}

/// Provenance written next to every output file.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub subcommand: &'static str,
    pub tool_version: &'static str,
    pub timestamp: String,
    pub seed: u64,
    pub phi_grid: PhiGrid,
    pub outputs: Vec<String>,
    pub parameters: BTreeMap<&'static str, serde_json::Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config: Option<ExperimentConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detuning_ratio: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub verification: Option<Vec<Check>>,
}

impl RunManifest {
    pub fn new(subcommand: &'static str, phi_grid: PhiGrid, seed: u64) -> Self {
        RunManifest {
            subcommand,
            tool_version: env!("CARGO_PKG_VERSION"),
            timestamp: humantime::format_rfc3339_seconds(SystemTime::now()).to_string(),
            seed,
            phi_grid,
            outputs: Vec::new(),
            parameters: BTreeMap::new(),
            config: None,
            detuning_ratio: None,
            verification: None,
        }
    }

    pub fn param(&mut self, key: &'static str, value: impl Serialize) -> &mut Self {
        self.parameters
            .insert(key, serde_json::to_value(value).expect("plain values serialise"));
        self
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(self)? + "\n";
        std::fs::write(path, text).map_err(|source| CliError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

/// `PATH` → `PATH.manifest.json`.
pub fn manifest_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

/// `dir/name.csv` → `dir/name.weights.csv`.
pub fn weights_path(out: &Path) -> PathBuf {
    out.with_extension("weights.csv")
}

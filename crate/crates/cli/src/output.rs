//! Trace tables and run summaries.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Method, TraceFormat};
use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Cell {
    Int(u64),
    Num(f64),
    Text(String),
}

impl Cell {
    /// Non-finite floats become text so both formats stay parseable.
    pub fn num(v: f64) -> Self {
        if v.is_finite() {
            Cell::Num(v)
        } else {
            Cell::Text(format!("{v}"))
        }
    }

    fn render(&self) -> String {
        match self {
            Cell::Int(v) => v.to_string(),
            Cell::Num(v) => format_float(*v),
            Cell::Text(s) => s.clone(),
        }
    }
}

/// Shortest round-trip representation, scientific outside `[1e-4, 1e15)`.
pub fn format_float(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 || (1e-4..1e15).contains(&a) {
        format!("{v:?}")
    } else {
        format!("{v:e}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(columns: Vec<String>) -> Self {
        Self {
            columns,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> Result<Vec<u8>, csv::Error> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.columns)?;
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::render))?;
        }
        w.into_inner().map_err(|e| e.into_error().into())
    }

    pub fn to_json(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec_pretty(self).expect("table serializes");
        out.push(b'\n');
        out
    }
}

/// `prefix_0, ..., prefix_{n-1}`.
pub fn indexed(prefix: &str, n: usize) -> impl Iterator<Item = String> + '_ {
    (0..n).map(move |i| format!("{prefix}_{i}"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSummary {
    pub method: Method,
    /// `converged`, `max_iter`, `inner_failure`, `completed`, `diverged`,
    /// `evaluated`, `passed` or `failed`.
    pub status: String,
    pub exit_code: i32,
    pub seed: u64,
    pub iterations: Option<u64>,
    pub final_x: Vec<f64>,
    pub final_q: Vec<f64>,
    /// Finite scalar diagnostics keyed by name.
    pub scalars: BTreeMap<String, f64>,
    pub labels: BTreeMap<String, String>,
    pub message: Option<String>,
    pub trace_file: String,
    pub trace_columns: Vec<String>,
    pub config: ExperimentConfig,
}

impl RunSummary {
    pub fn to_json(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec_pretty(self).expect("summary serializes");
        out.push(b'\n');
        out
    }
}

pub struct Written {
    pub trace: PathBuf,
    pub summary: PathBuf,
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

/// Writes `<stem>.trace.{csv,json}` and `<stem>.summary.json` under `dir`.
pub fn write_artifacts(
    dir: &Path,
    stem: &str,
    format: TraceFormat,
    table: &Table,
    summary: &mut RunSummary,
) -> Result<Written, CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let (ext, bytes) = match format {
        TraceFormat::Csv => (
            "csv",
            table
                .to_csv()
                .map_err(|e| CliError::io(dir, std::io::Error::other(e)))?,
        ),
        TraceFormat::Json => ("json", table.to_json()),
    };
    let trace_name = format!("{stem}.trace.{ext}");
    let trace = dir.join(&trace_name);
    write(&trace, &bytes)?;
    summary.trace_file = trace_name;
    summary.trace_columns = table.columns.clone();
    let summary_path = dir.join(format!("{stem}.summary.json"));
    write(&summary_path, &summary.to_json())?;
    Ok(Written {
        trace,
        summary: summary_path,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip_through_text() {
        for v in [0.0, 1.0, -0.5, 1e-7, 3.0e20, 0.1 + 0.2, -1e-300] {
            assert_eq!(format_float(v).parse::<f64>().unwrap(), v);
        }
        assert_eq!(format_float(0.5), "0.5");
        assert_eq!(format_float(1e-7), "1e-7");
    }

    #[test]
    fn csv_has_header_then_rows() {
        let mut t = Table::new(vec!["k".into(), "F".into()]);
        t.push(vec![Cell::Int(0), Cell::num(0.25)]);
        t.push(vec![Cell::Int(1), Cell::num(f64::NAN)]);
        let text = String::from_utf8(t.to_csv().unwrap()).unwrap();
        assert_eq!(text, "k,F\n0,0.25\n1,NaN\n");
    }

    #[test]
    fn json_table_round_trips() {
        let mut t = Table::new(vec!["k".into(), "x_0".into()]);
        t.push(vec![Cell::Int(3), Cell::num(-1.5)]);
        let back: Table = serde_json::from_slice(&t.to_json()).unwrap();
        assert_eq!(back, t);
    }
}

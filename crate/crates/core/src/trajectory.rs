//! Column table persisted as `trajectory.csv`. Checks read this table and nothing
//! else, so every report can be rebuilt from the file alone.

use std::io::{Read, Write};

use crate::error::{NckError, Result};

pub const TRAJECTORY_SCHEMA: &str = "nck-trajectory/1";

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub manifest: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn new(columns: Vec<String>) -> Self {
        Trajectory { manifest: String::new(), columns, rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<f64>) -> Result<()> {
        if row.len() != self.columns.len() {
            return Err(NckError::Consistency(format!(
                "row has {} fields for {} columns",
                row.len(),
                self.columns.len()
            )));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn col(&self, name: &str) -> Result<Vec<f64>> {
        let i = self.index(name).ok_or_else(|| NckError::Precondition(format!("trajectory has no column `{name}`")))?;
        Ok(self.rows.iter().map(|r| r[i]).collect())
    }

    /// Columns whose name starts with `prefix`.
    pub fn columns_with_prefix(&self, prefix: &str) -> Vec<String> {
        self.columns.iter().filter(|c| c.starts_with(prefix)).cloned().collect()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# schema={TRAJECTORY_SCHEMA} manifest={}", self.manifest)?;
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(&self.columns)?;
        for row in &self.rows {
            // Shortest round-trip formatting: byte-stable and lossless.
            wr.write_record(row.iter().map(|v| format!("{v}")))?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut text = String::new();
        let mut r = r;
        r.read_to_string(&mut text)?;
        let mut manifest = String::new();
        if let Some(first) = text.lines().next() {
            if let Some(rest) = first.strip_prefix('#') {
                for tok in rest.split_whitespace() {
                    if let Some(s) = tok.strip_prefix("schema=") {
                        if s != TRAJECTORY_SCHEMA {
                            return Err(NckError::Precondition(format!("unsupported trajectory schema {s}")));
                        }
                    } else if let Some(m) = tok.strip_prefix("manifest=") {
                        manifest = m.to_string();
                    }
                }
            }
        }
        let mut rd = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
        let columns: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
        let mut rows = Vec::new();
        for rec in rd.records() {
            let rec = rec?;
            let row = rec
                .iter()
                .map(|s| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|e| NckError::Precondition(format!("bad number `{s}` in trajectory: {e}")))
                })
                .collect::<Result<Vec<f64>>>()?;
            if row.len() != columns.len() {
                return Err(NckError::Precondition("ragged trajectory row".into()));
            }
            rows.push(row);
        }
        Ok(Trajectory { manifest, columns, rows })
    }
}

/// Trapezoid cumulative integral of `y` against `x`, starting at 0.
pub fn cumulative_trapezoid(x: &[f64], y: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len());
    let mut acc = 0.0;
    for i in 0..x.len() {
        if i > 0 {
            acc += 0.5 * (y[i] + y[i - 1]) * (x[i] - x[i - 1]);
        }
        out.push(acc);
    }
    out
}

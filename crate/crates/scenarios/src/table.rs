//! Trajectory CSV: `t, x.<cell>, u.<node>.<phase>, z.<cell>, V, W`, one row
//! per sample. Phases are numbered from 1. Numbers use Rust's shortest
//! round-trip formatting, so a file reads back bit for bit.

use std::fs;
use std::io::Write;
use std::path::Path;

use flownet_core::dynamics::Trajectory;
use flownet_core::NetworkSpec;

use crate::error::{Error, Result};

/// A numeric CSV held in memory.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl TrajectoryTable {
    pub fn from_trajectory(spec: &NetworkSpec, traj: &Trajectory) -> Self {
        let mut header = vec!["t".to_string()];
        header.extend(spec.cells().iter().map(|c| format!("x.{}", c.id)));
        for k in 0..spec.num_nodes() {
            for q in 0..spec.node_phases(k).len() {
                header.push(format!("u.{}.{}", spec.nodes()[k], q + 1));
            }
        }
        header.extend(spec.cells().iter().map(|c| format!("z.{}", c.id)));
        header.push("V".into());
        header.push("W".into());
        let rows = traj
            .samples
            .iter()
            .map(|s| {
                let mut row = vec![s.t];
                row.extend(&s.x);
                row.extend(s.u.flat());
                row.extend(&s.z);
                row.push(s.v);
                row.push(s.w);
                row
            })
            .collect();
        Self { header, rows }
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let c = self.column_index(name)?;
        Some(self.rows.iter().map(|r| r[c]).collect())
    }

    /// Names following `prefix` in header order, e.g. cell ids for `"x."`.
    pub fn suffixes(&self, prefix: &str) -> Vec<String> {
        self.header
            .iter()
            .filter_map(|h| h.strip_prefix(prefix).map(str::to_string))
            .collect()
    }

    pub fn times(&self) -> Vec<f64> {
        self.column("t").unwrap_or_default()
    }

    /// Appends a column; `values` must have one entry per row.
    pub fn push_column(&mut self, name: String, values: Vec<f64>) {
        debug_assert_eq!(values.len(), self.rows.len());
        self.header.push(name);
        for (row, v) in self.rows.iter_mut().zip(values) {
            row.push(v);
        }
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for row in &self.rows {
            // adding 0.0 turns -0 into 0
            let line: Vec<String> = row.iter().map(|v| (v + 0.0).to_string()).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_csv_string().as_bytes())
            .map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let bad = |message: String| Error::Csv {
            path: path.to_path_buf(),
            message,
        };
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
        let header: Vec<String> = reader
            .headers()
            .map_err(|e| bad(e.to_string()))?
            .iter()
            .map(str::to_string)
            .collect();
        if header.first().map(String::as_str) != Some("t") {
            return Err(bad("first column must be t".into()));
        }
        let mut rows = Vec::new();
        for (r, record) in reader.records().enumerate() {
            let record = record.map_err(|e| bad(e.to_string()))?;
            let row = record
                .iter()
                .enumerate()
                .map(|(c, field)| {
                    field.parse::<f64>().map_err(|_| {
                        bad(format!("row {}, column {}: not a number: {field:?}", r + 1, header[c]))
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            rows.push(row);
        }
        Ok(Self { header, rows })
    }
}

/// Column index of `x.<cell>` for every cell of `spec`, in cell order.
pub fn state_columns(table: &TrajectoryTable, spec: &NetworkSpec, path: &Path) -> Result<Vec<usize>> {
    spec.cells()
        .iter()
        .map(|c| {
            let name = format!("x.{}", c.id);
            table.column_index(&name).ok_or_else(|| Error::Csv {
                path: path.to_path_buf(),
                message: format!("missing column {name}"),
            })
        })
        .collect()
}

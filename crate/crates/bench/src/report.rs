//! Tables, checks and on-disk reports.
//!
//! Every report writes `<name>.csv` (aggregates), `<name>_runs.csv` (one
//! record per run and method), `<name>_timings.csv` (wall-clock, excluded
//! from the reproducible records) and `<name>.config.toml`, the resolved
//! parameters. Feeding the config back through `--config` reproduces the run
//! records exactly. Plots are optional SVG views of the CSVs.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

/// Shortest representation that parses back to the same `f64`.
pub fn num(v: f64) -> String {
    format!("{v}")
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Self {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        assert_eq!(row.len(), self.columns.len(), "row width");
        self.rows.push(row);
    }

    pub fn col(&self, name: &str) -> usize {
        self.columns
            .iter()
            .position(|c| c == name)
            .unwrap_or_else(|| panic!("no column {name}"))
    }

    /// Rows whose named columns equal the given values.
    pub fn filter<'a>(&'a self, by: &[(&str, &str)]) -> impl Iterator<Item = &'a Vec<String>> + 'a {
        let keys: Vec<(usize, String)> = by.iter().map(|(c, v)| (self.col(c), v.to_string())).collect();
        self.rows.iter().filter(move |r| keys.iter().all(|(i, v)| &r[*i] == v))
    }

    /// The named column of matching rows, parsed as numbers.
    pub fn values(&self, column: &str, by: &[(&str, &str)]) -> Vec<f64> {
        let c = self.col(column);
        self.filter(by).map(|r| r[c].parse().expect("numeric cell")).collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).with_context(|| format!("cannot write {}", path.display()))?;
        w.write_record(&self.columns)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).with_context(|| format!("cannot read {}", path.display()))?;
        let columns = r.headers()?.iter().map(str::to_string).collect();
        let rows = r
            .records()
            .map(|rec| rec.map(|rec| rec.iter().map(str::to_string).collect()))
            .collect::<Result<_, _>>()?;
        Ok(Self { columns, rows })
    }
}

/// One pass/fail assertion derived from a report.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
    /// Reported but not counted by [`Report::passed`].
    pub soft: bool,
}

impl Check {
    pub fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            detail: detail.into(),
            soft: false,
        }
    }

    pub fn soft(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            soft: true,
            ..Self::new(name, passed, detail)
        }
    }

    pub fn status(&self) -> &'static str {
        match (self.passed, self.soft) {
            (true, _) => "PASS",
            (false, false) => "FAIL",
            (false, true) => "SOFT-FAIL",
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Report {
    pub name: String,
    /// Resolved parameters as TOML.
    pub config: String,
    pub runs: Table,
    pub summary: Table,
    pub timings: Table,
    pub checks: Vec<Check>,
    /// `(file stem suffix, svg text)`.
    pub plots: Vec<(String, String)>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed || c.soft)
    }

    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
        let mut out = Vec::new();
        let path = dir.join(format!("{}.csv", self.name));
        self.summary.write_csv(&path)?;
        out.push(path);
        let path = dir.join(format!("{}_runs.csv", self.name));
        self.runs.write_csv(&path)?;
        out.push(path);
        if !self.timings.columns.is_empty() {
            let path = dir.join(format!("{}_timings.csv", self.name));
            self.timings.write_csv(&path)?;
            out.push(path);
        }
        if !self.checks.is_empty() {
            let mut t = Table::new(&["check", "passed", "soft", "detail"]);
            for c in &self.checks {
                t.push(vec![c.name.clone(), c.passed.to_string(), c.soft.to_string(), c.detail.clone()]);
            }
            let path = dir.join(format!("{}_checks.csv", self.name));
            t.write_csv(&path)?;
            out.push(path);
        }
        let path = dir.join(format!("{}.config.toml", self.name));
        std::fs::write(&path, &self.config)?;
        out.push(path);
        for (suffix, svg) in &self.plots {
            let path = dir.join(format!("{}{suffix}.svg", self.name));
            // the CSVs are the contract; a plot that cannot be written is only reported
            match std::fs::write(&path, svg) {
                Ok(()) => out.push(path),
                Err(e) => eprintln!("warning: plot {} not written: {e}", path.display()),
            }
        }
        Ok(out)
    }

    /// Human-readable digest: summary table and checks.
    pub fn digest(&self) -> String {
        let mut s = String::new();
        let widths: Vec<usize> = (0..self.summary.columns.len())
            .map(|i| {
                self.summary
                    .rows
                    .iter()
                    .map(|r| short(&r[i]).len())
                    .chain([self.summary.columns[i].len()])
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let line = |cells: Vec<String>| {
            cells
                .iter()
                .zip(&widths)
                .map(|(c, w)| format!("{c:>w$}"))
                .collect::<Vec<_>>()
                .join("  ")
        };
        let _ = writeln!(s, "{}", line(self.summary.columns.clone()));
        for r in &self.summary.rows {
            let _ = writeln!(s, "{}", line(r.iter().map(|c| short(c)).collect()));
        }
        for c in &self.checks {
            let _ = writeln!(s, "{} {}: {}", c.status(), c.name, c.detail);
        }
        s
    }
}

fn short(cell: &str) -> String {
    match cell.parse::<f64>() {
        Ok(v) if cell.contains('.') || cell.contains('e') => {
            if v != 0.0 && (v.abs() < 1e-3 || v.abs() >= 1e6) {
                format!("{v:.4e}")
            } else {
                format!("{v:.4}")
            }
        }
        _ => cell.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_round_trip_through_csv() {
        let dir = tempfile::tempdir().unwrap();
        let mut t = Table::new(&["a", "b"]);
        let v = [0.1 + 0.2, 1e-300, -2.5e17, std::f64::consts::PI];
        for x in v {
            t.push(vec!["k".into(), num(x)]);
        }
        let p = dir.path().join("t.csv");
        t.write_csv(&p).unwrap();
        let back = Table::read_csv(&p).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.values("b", &[("a", "k")]), v.to_vec());
    }
}

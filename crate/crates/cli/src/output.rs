//! CSV and JSON emission. Floats are written with 17 significant digits so
//! that they round-trip exactly.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::CliError;

pub fn float(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn opt_float(x: Option<f64>) -> String {
    x.map(float).unwrap_or_default()
}

pub fn verdict(passed: bool) -> &'static str {
    if passed {
        "pass"
    } else {
        "fail"
    }
}

/// Coordinate column names `prefix_1..prefix_d`.
pub fn coords(prefix: &str, d: usize) -> Vec<String> {
    (1..=d).map(|i| format!("{prefix}_{i}")).collect()
}

/// In-memory CSV table.
#[derive(Debug, Clone)]
pub struct Table {
    header: Vec<String>,
    body: String,
    rows: usize,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Self { header: header.into_iter().map(Into::into).collect(), body: String::new(), rows: 0 }
    }

    pub fn push<S: AsRef<str>>(&mut self, cells: impl IntoIterator<Item = S>) {
        let cells: Vec<String> = cells.into_iter().map(|c| c.as_ref().to_string()).collect();
        assert_eq!(cells.len(), self.header.len(), "row width must match the header");
        let _ = writeln!(self.body, "{}", cells.join(","));
        self.rows += 1;
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn render(&self) -> String {
        format!("{}\n{}", self.header.join(","), self.body)
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        write_text(path, &self.render())
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| io(parent, e))?;
    }
    std::fs::write(path, text).map_err(|e| io(path, e))
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::runtime("serializing summary", e))?;
    write_text(path, &(text + "\n"))
}

fn io(path: &Path, source: std::io::Error) -> CliError {
    CliError::Io { path: path.display().to_string(), source }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, f64::MIN_POSITIVE] {
            assert_eq!(float(x).parse::<f64>().unwrap(), x);
        }
    }

    #[test]
    fn table_renders_header_and_rows() {
        let mut t = Table::new(["a", "b"]);
        t.push(["1", "2"]);
        assert_eq!(t.render(), "a,b\n1,2\n");
        assert_eq!(t.rows(), 1);
    }
}

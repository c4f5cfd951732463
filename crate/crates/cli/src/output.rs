//! CSV tables and plain-text reports.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::CliError;

/// A header plus rows of numbers, rendered with 17 significant digits.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(header: Vec<String>) -> Self {
        Table { header, rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(&self.header.iter().map(|h| quote(h)).collect::<Vec<_>>().join(","));
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|v| format_number(*v)).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }
}

fn quote(field: &str) -> String {
    if field.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

pub fn format_number(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else if v.is_nan() {
        "NaN".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

pub fn write_file(dir: &Path, name: &str, contents: &str) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|source| CliError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Builder for a plain-text report: a title, `key: value` lines and
/// preformatted blocks.
#[derive(Debug, Default, Clone)]
pub struct Report {
    text: String,
}

impl Report {
    pub fn new(title: &str) -> Self {
        let mut r = Report::default();
        let _ = writeln!(r.text, "{title}");
        let _ = writeln!(r.text, "{}", "=".repeat(title.chars().count()));
        r
    }

    pub fn field(&mut self, key: &str, value: impl std::fmt::Display) -> &mut Self {
        let _ = writeln!(self.text, "{key}: {value}");
        self
    }

    pub fn section(&mut self, heading: &str, body: &str) -> &mut Self {
        let _ = writeln!(self.text, "\n[{heading}]");
        self.text.push_str(body);
        if !body.ends_with('\n') {
            self.text.push('\n');
        }
        self
    }

    pub fn finish(&self) -> String {
        self.text.clone()
    }
}

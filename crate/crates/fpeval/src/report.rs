//! Report tables and deterministic CSV/JSON emission.
//!
//! Every table carries explicit row and column labels so reports are never
//! positionally ambiguous, and all emission is byte-deterministic for a fixed
//! (manifest, dataset, seed).

use serde::{Deserialize, Serialize};
use std::path::Path;

/// A labeled 2D table of preformatted cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub title: String,
    /// Label of the row-header column.
    pub corner: String,
    pub columns: Vec<String>,
    pub rows: Vec<(String, Vec<String>)>,
}

impl Table {
    pub fn new(title: impl Into<String>, corner: impl Into<String>, columns: Vec<String>) -> Self {
        Self {
            title: title.into(),
            corner: corner.into(),
            columns,
            rows: Vec::new(),
        }
    }

    pub fn push_row(&mut self, label: impl Into<String>, cells: Vec<String>) {
        let cells_len = cells.len();
        assert_eq!(
            cells_len,
            self.columns.len(),
            "row width must match column count"
        );
        self.rows.push((label.into(), cells));
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(&csv_row(
            std::iter::once(self.corner.as_str()).chain(self.columns.iter().map(String::as_str)),
        ));
        for (label, cells) in &self.rows {
            out.push_str(&csv_row(
                std::iter::once(label.as_str()).chain(cells.iter().map(String::as_str)),
            ));
        }
        out
    }
}

fn csv_row<'a>(cells: impl Iterator<Item = &'a str>) -> String {
    let mut row = cells.map(csv_escape).collect::<Vec<_>>().join(",");
    row.push('\n');
    row
}

fn csv_escape(cell: &str) -> String {
    if cell.contains(',') || cell.contains('"') || cell.contains('\n') {
        format!("\"{}\"", cell.replace('"', "\"\""))
    } else {
        cell.to_string()
    }
}

/// Fixed-width float formatting used in CSV cells.
pub fn fmt(v: f64) -> String {
    format!("{v:.6}")
}

/// Percent formatting for FNMR cells.
pub fn fmt_pct(v: f64) -> String {
    format!("{:.2}", v * 100.0)
}

/// Write the JSON report and one CSV file per table into `out_dir`.
pub fn write_outputs<T: Serialize>(
    out_dir: &Path,
    json_name: &str,
    report: &T,
    tables: &[Table],
) -> std::io::Result<()> {
    std::fs::create_dir_all(out_dir)?;
    let json = serde_json::to_string_pretty(report).expect("report serializes");
    std::fs::write(out_dir.join(json_name), json + "\n")?;
    for table in tables {
        let file = format!("{}.csv", slug(&table.title));
        std::fs::write(out_dir.join(file), table.to_csv())?;
    }
    Ok(())
}

fn slug(title: &str) -> String {
    title
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() {
                c.to_ascii_lowercase()
            } else {
                '_'
            }
        })
        .collect()
}

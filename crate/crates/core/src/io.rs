//! Plain-text matrix and label files.
//!
//! Matrices are CSV with one matrix row per line and no header. Floats are
//! written with 17 significant digits so a write/read cycle is bit-exact.
//! Label files carry one integer per line.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Format a float with 17 significant digits (round-trips any f64 exactly).
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Render a matrix as CSV text.
pub fn matrix_to_csv(m: &DMatrix<f64>) -> String {
    let mut out = String::new();
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if j > 0 {
                out.push(',');
            }
            let _ = write!(out, "{:.16e}", m[(i, j)]);
        }
        out.push('\n');
    }
    out
}

/// Parse CSV text into a matrix. Rows must all have the same width.
pub fn matrix_from_csv(text: &str) -> Result<DMatrix<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|tok| {
                tok.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(format!("line {}: {tok:?}: {e}", lineno + 1)))
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(Error::Parse(format!(
                    "line {}: expected {} fields, found {}",
                    lineno + 1,
                    first.len(),
                    row.len()
                )));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::EmptyInput("matrix file has no rows".into()));
    }
    let nrows = rows.len();
    let ncols = rows[0].len();
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

pub fn write_matrix(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    std::fs::write(path, matrix_to_csv(m))?;
    Ok(())
}

pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    matrix_from_csv(&text)
}

pub fn labels_to_text(labels: &[i64]) -> String {
    let mut out = String::new();
    for l in labels {
        let _ = writeln!(out, "{l}");
    }
    out
}

pub fn labels_from_text(text: &str) -> Result<Vec<i64>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            line.trim()
                .parse::<i64>()
                .map_err(|e| Error::Parse(format!("line {}: {line:?}: {e}", lineno + 1)))?,
        );
    }
    if out.is_empty() {
        return Err(Error::EmptyInput("labels file has no entries".into()));
    }
    Ok(out)
}

pub fn write_labels(path: &Path, labels: &[i64]) -> Result<()> {
    std::fs::write(path, labels_to_text(labels))?;
    Ok(())
}

pub fn read_labels(path: &Path) -> Result<Vec<i64>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    labels_from_text(&text)
}

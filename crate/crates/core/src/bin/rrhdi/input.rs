//! Readers for the CLI's input files.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::CliError;
use rrhdi::Dataset;

fn bad(path: &Path, msg: String) -> CliError {
    CliError::Usage(format!("{}: {msg}", path.display()))
}

/// Header row, then `y, x_1, ..., x_p` per line.
pub fn read_dataset(path: &Path) -> Result<Dataset, CliError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| bad(path, e.to_string()))?;
    let width = rdr.headers().map_err(|e| bad(path, e.to_string()))?.len();
    if width < 2 {
        return Err(bad(path, "need a response column and at least one covariate".into()));
    }
    let mut values = Vec::new();
    let mut rows = 0;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| bad(path, e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != width {
            return Err(bad(path, format!("line {line}: expected {width} fields, found {}", rec.len())));
        }
        for (k, field) in rec.iter().enumerate() {
            let v: f64 = field
                .parse()
                .map_err(|_| bad(path, format!("line {line}, column {}: '{field}' is not a number", k + 1)))?;
            if !v.is_finite() {
                return Err(bad(path, format!("line {line}, column {}: non-finite value", k + 1)));
            }
            values.push(v);
        }
        rows += 1;
    }
    if rows < 2 {
        return Err(bad(path, format!("need at least 2 observations, found {rows}")));
    }
    let all = Array2::from_shape_vec((rows, width), values).expect("rows checked");
    let y = all.column(0).to_owned();
    let x = all.slice(ndarray::s![.., 1..]).to_owned();
    Ok(Dataset::new(x, y)?)
}

/// Numbers separated by commas, whitespace or newlines.
pub fn read_vector(path: &Path) -> Result<Array1<f64>, CliError> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        for tok in line.split(|c: char| c == ',' || c.is_whitespace()).filter(|t| !t.is_empty()) {
            let v: f64 = tok
                .parse()
                .map_err(|_| bad(path, format!("line {}: '{tok}' is not a number", i + 1)))?;
            out.push(v);
        }
    }
    Ok(Array1::from(out))
}

/// One cluster label per non-empty line.
pub fn read_labels(path: &Path) -> Result<Vec<String>, CliError> {
    let text = fs::read_to_string(path)?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect())
}

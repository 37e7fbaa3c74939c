use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{invalid, Result};

/// Dense row-major CSV, one matrix row per line, shortest round-trip float
/// formatting. No header.
pub fn export_heatmap_csv(cov: &DMatrix<f64>, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for r in 0..cov.nrows() {
        let line: Vec<String> = cov.row(r).iter().map(|v| format!("{v:?}")).collect();
        writeln!(out, "{}", line.join(","))?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_heatmap_csv(path: &Path) -> Result<DMatrix<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for record in reader.records() {
        let record = record?;
        let row = record
            .iter()
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| invalid(format!("bad matrix entry '{s}': {e}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != m) {
        return Err(invalid("ragged matrix rows"));
    }
    Ok(DMatrix::from_fn(n, m, |r, c| rows[r][c]))
}

pub(crate) fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:?}")).unwrap_or_default()
}

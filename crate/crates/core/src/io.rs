//! File formats: headerless CSV for raw matrices, headered CSV for datasets
//! (`f0,...,f{d-1}[,label]`), JSON for configs, reports and checkpoints.
//!
//! Floats are written with Rust's shortest-roundtrip formatting, so
//! write-then-read reproduces values exactly and outputs are byte-stable.

use std::path::Path;

use ndarray::Array2;

use crate::error::{GwError, Result};
use crate::geometry::Dataset;

/// Write a matrix as headerless CSV.
pub fn write_matrix_csv(path: &Path, matrix: &Array2<f64>) -> Result<()> {
    let mut writer = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)?;
    for row in matrix.rows() {
        let record: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        writer.write_record(&record)?;
    }
    writer.flush()?;
    Ok(())
}

/// Read a headerless CSV as a matrix.
pub fn read_matrix_csv(path: &Path) -> Result<Array2<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for record in reader.records() {
        let record = record?;
        let row: Vec<f64> = record
            .iter()
            .enumerate()
            .map(|(col, field)| {
                field.trim().parse::<f64>().map_err(|_| {
                    GwError::invalid(format!(
                        "{}: row {}, column {col}: '{field}' is not a number",
                        path.display(),
                        rows.len()
                    ))
                })
            })
            .collect::<Result<_>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(GwError::invalid(format!(
                    "{}: ragged rows ({} vs {} columns)",
                    path.display(),
                    first.len(),
                    row.len()
                )));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(GwError::invalid(format!("{}: empty matrix", path.display())));
    }
    let n = rows.len();
    let m = rows[0].len();
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    Array2::from_shape_vec((n, m), flat)
        .map_err(|e| GwError::invalid(format!("{}: {e}", path.display())))
}

/// Write a dataset with the `f0,...,f{d-1}[,label]` header.
pub fn write_dataset_csv(path: &Path, data: &Dataset) -> Result<()> {
    let mut writer = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)?;
    let d = data.dim();
    let mut header: Vec<String> = (0..d).map(|j| format!("f{j}")).collect();
    if data.labels.is_some() {
        header.push("label".to_string());
    }
    writer.write_record(&header)?;
    for i in 0..data.len() {
        let mut record: Vec<String> = data.points.row(i).iter().map(|v| format!("{v}")).collect();
        if let Some(labels) = &data.labels {
            record.push(format!("{}", labels[i]));
        }
        writer.write_record(&record)?;
    }
    writer.flush()?;
    Ok(())
}

/// Read a dataset CSV; a final `label` column is optional.
pub fn read_dataset_csv(path: &Path) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)?;
    let headers = reader.headers()?.clone();
    let has_label = headers.iter().last() == Some("label");
    let d = if has_label {
        headers.len().saturating_sub(1)
    } else {
        headers.len()
    };
    if d == 0 {
        return Err(GwError::invalid(format!(
            "{}: no feature columns",
            path.display()
        )));
    }
    let mut points: Vec<f64> = Vec::new();
    let mut labels: Vec<i64> = Vec::new();
    let mut n = 0usize;
    for record in reader.records() {
        let record = record?;
        if record.len() != headers.len() {
            return Err(GwError::invalid(format!(
                "{}: row {n} has {} fields, header has {}",
                path.display(),
                record.len(),
                headers.len()
            )));
        }
        for field in record.iter().take(d) {
            points.push(field.trim().parse::<f64>().map_err(|_| {
                GwError::invalid(format!(
                    "{}: row {n}: '{field}' is not a number",
                    path.display()
                ))
            })?);
        }
        if has_label {
            let field = record.iter().last().unwrap();
            labels.push(field.trim().parse::<i64>().map_err(|_| {
                GwError::invalid(format!(
                    "{}: row {n}: label '{field}' is not an integer",
                    path.display()
                ))
            })?);
        }
        n += 1;
    }
    if n == 0 {
        return Err(GwError::invalid(format!("{}: empty dataset", path.display())));
    }
    let points = Array2::from_shape_vec((n, d), points)
        .map_err(|e| GwError::invalid(format!("{}: {e}", path.display())))?;
    Dataset::new(points, if has_label { Some(labels) } else { None })
}

/// Write any serializable document as pretty JSON.
pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

//! CSV fallback format: one row per example, label in the last column.

use super::{Dataset, Shape};
use crate::error::{Error, Result};
use crate::linalg::Mat;

use std::io::Write;
use std::path::Path;

/// Loads a dataset from CSV. Feature bounds are taken from the caller since
/// the file carries no metadata.
pub fn load_csv(path: &Path, bounds: (f32, f32)) -> Result<Dataset> {
    let text = std::fs::read_to_string(path)?;
    let mut rows: Vec<Vec<f32>> = Vec::new();
    let mut labels: Vec<usize> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let label_field = fields
            .pop()
            .ok_or_else(|| Error::Format(format!("line {}: empty row", lineno + 1)))?;
        let label: usize = label_field
            .parse()
            .map_err(|_| Error::Format(format!("line {}: bad label {label_field:?}", lineno + 1)))?;
        let features: Vec<f32> = fields
            .iter()
            .map(|f| {
                f.parse::<f32>()
                    .map_err(|_| Error::Format(format!("line {}: bad feature {f:?}", lineno + 1)))
            })
            .collect::<Result<_>>()?;
        rows.push(features);
        labels.push(label);
    }
    if rows.is_empty() {
        return Err(Error::Format("CSV holds no examples".into()));
    }
    let dim = rows[0].len();
    let num_classes = labels.iter().copied().max().unwrap_or(0) + 1;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "csv".to_string());
    Dataset::new(
        Mat::from_rows(&rows)?,
        labels,
        num_classes.max(2),
        bounds,
        &name,
        Shape::Flat(dim),
    )
}

/// Writes a dataset as CSV, features first, label last.
pub fn save_csv(data: &Dataset, path: &Path) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for i in 0..data.len() {
        let mut fields: Vec<String> = data.inputs.row(i).iter().map(|v| v.to_string()).collect();
        fields.push(data.labels[i].to_string());
        writeln!(w, "{}", fields.join(","))?;
    }
    w.flush()?;
    Ok(())
}

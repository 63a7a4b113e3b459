//! Datasets: loading, synthetic generation, and per-student transformations.

mod blobs;
mod csvfmt;
mod idx;
mod transform;

pub use blobs::gen_blobs;
pub use csvfmt::{load_csv, save_csv};
pub use idx::load_idx;
pub use transform::{apply_transform, validate_transform, TransformKind, TransformSpec};

use crate::error::{Error, Result};
use crate::linalg::Mat;

/// Layout of a single example's features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Shape {
    Flat(usize),
    Image { h: usize, w: usize, c: usize },
}

impl Shape {
    pub fn len(&self) -> usize {
        match *self {
            Shape::Flat(d) => d,
            Shape::Image { h, w, c } => h * w * c,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Immutable labeled example collection with declared feature bounds.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub inputs: Mat,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub bounds: (f32, f32),
    pub name: String,
    pub shape: Shape,
}

impl Dataset {
    pub fn new(
        inputs: Mat,
        labels: Vec<usize>,
        num_classes: usize,
        bounds: (f32, f32),
        name: &str,
        shape: Shape,
    ) -> Result<Self> {
        if inputs.rows() != labels.len() {
            return Err(Error::Shape(format!(
                "{} rows vs {} labels",
                inputs.rows(),
                labels.len()
            )));
        }
        if inputs.cols() != shape.len() {
            return Err(Error::Shape(format!(
                "row width {} vs shape size {}",
                inputs.cols(),
                shape.len()
            )));
        }
        let (lb, ub) = bounds;
        if lb >= ub {
            return Err(Error::Validation(format!("bad bounds [{lb}, {ub}]")));
        }
        if inputs
            .as_slice()
            .iter()
            .any(|&v| !v.is_finite() || v < lb || v > ub)
        {
            return Err(Error::Validation(format!(
                "features must lie within [{lb}, {ub}]"
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::Validation(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        Ok(Self {
            inputs,
            labels,
            num_classes,
            bounds,
            name: name.to_string(),
            shape,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.cols()
    }

    /// New dataset containing the given row indices, in order.
    pub fn select(&self, indices: &[usize], name: &str) -> Result<Self> {
        let rows: Vec<Vec<f32>> = indices.iter().map(|&i| self.inputs.row(i).to_vec()).collect();
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Dataset::new(
            Mat::from_rows(&rows)?,
            labels,
            self.num_classes,
            self.bounds,
            name,
            self.shape,
        )
    }

    /// Deterministic split into (front, back) at `front_len` rows.
    pub fn split_at(&self, front_len: usize) -> Result<(Self, Self)> {
        if front_len > self.len() {
            return Err(Error::Validation(format!(
                "split point {front_len} beyond {} rows",
                self.len()
            )));
        }
        let front: Vec<usize> = (0..front_len).collect();
        let back: Vec<usize> = (front_len..self.len()).collect();
        Ok((
            self.select(&front, &format!("{}-front", self.name))?,
            self.select(&back, &format!("{}-back", self.name))?,
        ))
    }

    /// Concatenates datasets that agree on width, bounds, and class count.
    pub fn concat(parts: &[&Dataset], name: &str) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Validation("concat of zero datasets".into()))?;
        let mats: Vec<&Mat> = parts.iter().map(|d| &d.inputs).collect();
        let mut labels = Vec::new();
        for d in parts {
            if d.num_classes != first.num_classes || d.bounds != first.bounds {
                return Err(Error::Validation(
                    "concat parts disagree on classes or bounds".into(),
                ));
            }
            labels.extend_from_slice(&d.labels);
        }
        Dataset::new(
            Mat::vstack(&mats)?,
            labels,
            first.num_classes,
            first.bounds,
            name,
            first.shape,
        )
    }

    /// Replaces the feature matrix, keeping labels and metadata.
    pub(crate) fn with_inputs(&self, inputs: Mat, name: &str) -> Result<Self> {
        Dataset::new(
            inputs,
            self.labels.clone(),
            self.num_classes,
            self.bounds,
            name,
            self.shape,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_bounds_features() {
        let inputs = Mat::from_rows(&[vec![0.5, 1.5]]).unwrap();
        let err = Dataset::new(inputs, vec![0], 2, (0.0, 1.0), "bad", Shape::Flat(2));
        assert!(matches!(err, Err(Error::Validation(_))));
    }

    #[test]
    fn rejects_label_out_of_range() {
        let inputs = Mat::from_rows(&[vec![0.5, 0.5]]).unwrap();
        let err = Dataset::new(inputs, vec![2], 2, (0.0, 1.0), "bad", Shape::Flat(2));
        assert!(matches!(err, Err(Error::Validation(_))));
    }

    #[test]
    fn select_preserves_rows_and_labels() {
        let data = gen_blobs(10, 2, 0.05, 1).unwrap();
        let sub = data.select(&[3, 7], "sub").unwrap();
        assert_eq!(sub.len(), 2);
        assert_eq!(sub.inputs.row(0), data.inputs.row(3));
        assert_eq!(sub.labels[1], data.labels[7]);
    }
}

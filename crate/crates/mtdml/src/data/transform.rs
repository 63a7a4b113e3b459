//! Per-student data transformations and validity filtering.
//!
//! Image data gets translation, rotation, and pixel noise; flat data gets a
//! small affine map and additive Gaussian jitter. Parameter ranges for drawn
//! specs: translation up to 15% of the image side, rotation up to +/-20
//! degrees, noise sigma up to 0.05, affine scale within 10% of identity.

use super::blobs::gaussian_pair;
use super::{Dataset, Shape};
use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::nn::{argmax, Model};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const MAX_TRANSLATE_FRACTION: f64 = 0.15;
pub const MAX_ROTATE_DEGREES: f64 = 20.0;
pub const MAX_NOISE_SIGMA: f64 = 0.05;
// Affine shifts move flat-data class boundaries wholesale, so their ranges
// stay well inside the blob inter-class margin.
pub const MAX_AFFINE_SCALE_DELTA: f64 = 0.06;
pub const MAX_AFFINE_OFFSET: f64 = 0.03;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum TransformKind {
    Identity,
    /// Integer pixel shift; vacant pixels are filled with the lower bound.
    Translate { dx: i32, dy: i32 },
    /// Rotation around the image center, nearest-neighbor resampling.
    Rotate { degrees: f64 },
    /// Additive Gaussian pixel noise, clamped back into bounds.
    PixelNoise { sigma: f64 },
    /// x -> scale * x + offset on every feature, clamped into bounds.
    Affine { scale: f64, offset: f64 },
    /// Additive Gaussian jitter for flat feature vectors.
    Jitter { sigma: f64 },
}

/// A parameterized transformation `T_i` plus the seed driving its noise.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TransformSpec {
    pub kind: TransformKind,
    pub seed: u64,
}

impl TransformSpec {
    pub fn identity() -> Self {
        Self {
            kind: TransformKind::Identity,
            seed: 0,
        }
    }

    /// Draws a spec with parameters inside the validity ranges. Image shapes
    /// rotate through the geometric kinds; flat shapes use affine/jitter.
    pub fn draw(shape: Shape, rng: &mut ChaCha8Rng) -> Self {
        let seed = rng.random::<u64>();
        let kind = match shape {
            Shape::Image { h, w, .. } => match rng.random_range(0..3u8) {
                0 => {
                    let max_dx = ((w as f64 * MAX_TRANSLATE_FRACTION) as i32).max(1);
                    let max_dy = ((h as f64 * MAX_TRANSLATE_FRACTION) as i32).max(1);
                    TransformKind::Translate {
                        dx: rng.random_range(-max_dx..=max_dx),
                        dy: rng.random_range(-max_dy..=max_dy),
                    }
                }
                1 => TransformKind::Rotate {
                    degrees: rng.random_range(-MAX_ROTATE_DEGREES..=MAX_ROTATE_DEGREES),
                },
                _ => TransformKind::PixelNoise {
                    sigma: rng.random_range(0.005..=MAX_NOISE_SIGMA),
                },
            },
            Shape::Flat(_) => {
                if rng.random::<bool>() {
                    TransformKind::Affine {
                        scale: 1.0 + rng.random_range(-MAX_AFFINE_SCALE_DELTA..=MAX_AFFINE_SCALE_DELTA),
                        offset: rng.random_range(-MAX_AFFINE_OFFSET..=MAX_AFFINE_OFFSET),
                    }
                } else {
                    TransformKind::Jitter {
                        sigma: rng.random_range(0.005..=MAX_NOISE_SIGMA),
                    }
                }
            }
        };
        Self { kind, seed }
    }

    /// Checks the drawn-parameter validity ranges. Hand-built specs may
    /// exceed them (e.g. to probe the validity filter).
    pub fn within_ranges(&self, shape: Shape) -> bool {
        match (self.kind, shape) {
            (TransformKind::Identity, _) => true,
            (TransformKind::Translate { dx, dy }, Shape::Image { h, w, .. }) => {
                (dx.unsigned_abs() as f64) <= (w as f64 * MAX_TRANSLATE_FRACTION).max(1.0)
                    && (dy.unsigned_abs() as f64) <= (h as f64 * MAX_TRANSLATE_FRACTION).max(1.0)
            }
            (TransformKind::Rotate { degrees }, Shape::Image { .. }) => {
                degrees.abs() <= MAX_ROTATE_DEGREES
            }
            (TransformKind::PixelNoise { sigma }, _) => (0.0..=MAX_NOISE_SIGMA).contains(&sigma),
            (TransformKind::Jitter { sigma }, _) => (0.0..=MAX_NOISE_SIGMA).contains(&sigma),
            (TransformKind::Affine { scale, offset }, _) => {
                (scale - 1.0).abs() <= MAX_AFFINE_SCALE_DELTA && offset.abs() <= MAX_AFFINE_OFFSET
            }
            _ => false,
        }
    }
}

/// Applies `t` to every example; labels are preserved and features clamped
/// back into the dataset's bounds.
pub fn apply_transform(data: &Dataset, t: &TransformSpec) -> Result<Dataset> {
    let (lb, ub) = data.bounds;
    let name = format!("{}-t", data.name);
    match t.kind {
        TransformKind::Identity => Ok(data.clone()),
        TransformKind::Translate { dx, dy } => {
            let (h, w) = image_dims(data, "translate")?;
            let mut out = Mat::zeros(data.len(), data.dim());
            for i in 0..data.len() {
                let src = data.inputs.row(i);
                let dst = out.row_mut(i);
                for r in 0..h {
                    for c in 0..w {
                        let sr = r as i64 - dy as i64;
                        let sc = c as i64 - dx as i64;
                        dst[r * w + c] = if sr >= 0 && sr < h as i64 && sc >= 0 && sc < w as i64 {
                            src[sr as usize * w + sc as usize]
                        } else {
                            lb
                        };
                    }
                }
            }
            data.with_inputs(out, &name)
        }
        TransformKind::Rotate { degrees } => {
            let (h, w) = image_dims(data, "rotate")?;
            let theta = -degrees.to_radians();
            let (sin, cos) = theta.sin_cos();
            let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
            let mut out = Mat::zeros(data.len(), data.dim());
            for i in 0..data.len() {
                let src = data.inputs.row(i);
                let dst = out.row_mut(i);
                for r in 0..h {
                    for c in 0..w {
                        let ry = r as f64 - cy;
                        let rx = c as f64 - cx;
                        let sr = (cos * ry - sin * rx + cy).round();
                        let sc = (sin * ry + cos * rx + cx).round();
                        dst[r * w + c] = if sr >= 0.0 && sr < h as f64 && sc >= 0.0 && sc < w as f64
                        {
                            src[sr as usize * w + sc as usize]
                        } else {
                            lb
                        };
                    }
                }
            }
            data.with_inputs(out, &name)
        }
        TransformKind::PixelNoise { sigma } | TransformKind::Jitter { sigma } => {
            if sigma < 0.0 || !sigma.is_finite() {
                return Err(Error::Validation(format!("bad noise sigma {sigma}")));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(t.seed);
            let mut out = data.inputs.clone();
            for v in out.as_mut_slice() {
                let (g, _) = gaussian_pair(&mut rng);
                *v = (*v as f64 + sigma * g).clamp(lb as f64, ub as f64) as f32;
            }
            data.with_inputs(out, &name)
        }
        TransformKind::Affine { scale, offset } => {
            if !scale.is_finite() || !offset.is_finite() {
                return Err(Error::Validation("bad affine parameters".into()));
            }
            let mut out = data.inputs.clone();
            for v in out.as_mut_slice() {
                *v = (scale * *v as f64 + offset).clamp(lb as f64, ub as f64) as f32;
            }
            data.with_inputs(out, &name)
        }
    }
}

fn image_dims(data: &Dataset, kind: &str) -> Result<(usize, usize)> {
    match data.shape {
        Shape::Image { h, w, c: 1 } => Ok((h, w)),
        _ => Err(Error::Validation(format!(
            "{kind} requires single-channel image data, dataset {:?} is not",
            data.name
        ))),
    }
}

/// Keeps the transformed examples that `base` still assigns their original
/// label, mirroring the validity double-check on transformed training data.
///
/// Fails when the kept fraction drops below `min_keep`, signaling that the
/// transform parameters were too aggressive.
pub fn validate_transform(base: &Model, transformed: &Dataset, min_keep: f64) -> Result<Dataset> {
    if transformed.is_empty() {
        return Err(Error::Validation("validate_transform on empty dataset".into()));
    }
    let preds = base.forward(&transformed.inputs)?;
    let keep: Vec<usize> = preds
        .iter()
        .enumerate()
        .filter(|(i, p)| argmax(p) == transformed.labels[*i])
        .map(|(i, _)| i)
        .collect();
    let kept = keep.len() as f64 / transformed.len() as f64;
    if kept < min_keep {
        return Err(Error::TransformTooAggressive { kept, min_keep });
    }
    transformed.select(&keep, &format!("{}-valid", transformed.name))
}

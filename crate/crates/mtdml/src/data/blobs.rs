//! Synthetic Gaussian-blob dataset.

use super::{Dataset, Shape};
use crate::error::{Error, Result};
use crate::linalg::Mat;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Generates `k` Gaussian clusters of `num_per_class` 2-D points each.
///
/// Cluster centers sit on a circle of radius 0.28 around (0.5, 0.5), so
/// classes are well separated whenever `spread` is small against the
/// inter-center distance. Features are clamped to [0, 1].
pub fn gen_blobs(num_per_class: usize, k: usize, spread: f64, seed: u64) -> Result<Dataset> {
    if k < 2 {
        return Err(Error::Validation(format!("need k >= 2 classes, got {k}")));
    }
    if spread <= 0.0 || !spread.is_finite() {
        return Err(Error::Validation(format!("spread must be positive, got {spread}")));
    }
    if num_per_class == 0 {
        return Err(Error::Validation("num_per_class must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(num_per_class * k);
    let mut labels = Vec::with_capacity(num_per_class * k);
    for class in 0..k {
        let angle = std::f64::consts::TAU * class as f64 / k as f64;
        let cx = 0.5 + 0.28 * angle.cos();
        let cy = 0.5 + 0.28 * angle.sin();
        for _ in 0..num_per_class {
            let (gx, gy) = gaussian_pair(&mut rng);
            rows.push(vec![
                (cx + spread * gx).clamp(0.0, 1.0) as f32,
                (cy + spread * gy).clamp(0.0, 1.0) as f32,
            ]);
            labels.push(class);
        }
    }
    Dataset::new(
        Mat::from_rows(&rows)?,
        labels,
        k,
        (0.0, 1.0),
        &format!("blobs-{k}x{num_per_class}"),
        Shape::Flat(2),
    )
}

/// Box-Muller pair of standard normals from the seeded stream.
pub(crate) fn gaussian_pair(rng: &mut ChaCha8Rng) -> (f64, f64) {
    let u1 = rng.random::<f64>().max(f64::MIN_POSITIVE);
    let u2 = rng.random::<f64>();
    let r = (-2.0 * u1.ln()).sqrt();
    let theta = std::f64::consts::TAU * u2;
    (r * theta.cos(), r * theta.sin())
}

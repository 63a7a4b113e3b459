//! Laplace noise sampling and whole-model weight perturbation.

use super::{Layer, Model};
use crate::error::{Error, Result};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Draws `len` i.i.d. samples from Laplace(mu, lambda) by inverse CDF.
///
/// Deterministic for a fixed seed.
pub fn sample_laplace(len: usize, mu: f64, lambda: f64, seed: u64) -> Result<Vec<f32>> {
    if lambda <= 0.0 || !lambda.is_finite() {
        return Err(Error::Validation(format!(
            "laplace scale must be positive, got {lambda}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..len).map(|_| laplace_draw(&mut rng, mu, lambda) as f32).collect())
}

fn laplace_draw(rng: &mut ChaCha8Rng, mu: f64, lambda: f64) -> f64 {
    // u in [-0.5, 0.5); the inner term is clamped away from zero so the
    // log never produces an infinity.
    let u = rng.random::<f64>() - 0.5;
    let inner = (1.0 - 2.0 * u.abs()).max(f64::MIN_POSITIVE);
    mu - lambda * u.signum() * inner.ln()
}

/// Returns a copy of `base` with independent Laplace(0, lambda) noise added
/// to every weight and bias. `lambda == 0` yields an exact copy.
pub fn perturb_weights(base: &Model, lambda: f64, seed: u64) -> Result<Model> {
    if lambda < 0.0 || !lambda.is_finite() {
        return Err(Error::Validation(format!(
            "noise scale must be >= 0, got {lambda}"
        )));
    }
    if lambda == 0.0 {
        return Ok(base.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = base
        .layers()
        .iter()
        .map(|layer| {
            let mut weights = layer.weights.clone();
            for w in weights.as_mut_slice() {
                *w = (*w as f64 + laplace_draw(&mut rng, 0.0, lambda)) as f32;
            }
            let biases = layer
                .biases
                .iter()
                .map(|&b| (b as f64 + laplace_draw(&mut rng, 0.0, lambda)) as f32)
                .collect();
            Layer {
                weights,
                biases,
                activation: layer.activation,
            }
        })
        .collect();
    Model::from_layers(layers, base.arch_id().to_string())
}

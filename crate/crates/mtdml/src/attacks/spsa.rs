//! SPSA: gradient-free attack driving a margin loss down through two-point
//! gradient estimates over random Rademacher probe pairs.

use super::{project_ball_box, AttackKind, AttackSpec, QueryOracle, SpsaParams};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::par;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Margin loss on probability vectors: `p_true - max_{j != true} p_j`.
/// Negative means the oracle misclassifies.
pub(crate) fn margin_loss(probs: &[f64], y_true: usize) -> f64 {
    let best_other = probs
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != y_true)
        .map(|(_, &p)| p)
        .fold(f64::NEG_INFINITY, f64::max);
    probs[y_true] - best_other
}

/// One SPSA gradient estimate at `x`, spending `params.spsa_samples` oracle
/// queries (`spsa_samples / 2` Rademacher probe pairs).
pub fn spsa_gradient_estimate(
    oracle: &dyn QueryOracle,
    x: &[f64],
    y_true: usize,
    bounds: (f64, f64),
    params: &SpsaParams,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    let dim = x.len();
    let pairs = params.spsa_samples / 2;
    let mut directions: Vec<Vec<f64>> = Vec::with_capacity(pairs);
    let mut probe_rows: Vec<Vec<f32>> = Vec::with_capacity(pairs * 2);
    let (lb, ub) = bounds;
    for _ in 0..pairs {
        let v: Vec<f64> = (0..dim)
            .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
            .collect();
        // Probe points are clamped into bounds: the serving surface rejects
        // out-of-range features rather than clamping them itself.
        let plus: Vec<f32> = x
            .iter()
            .zip(&v)
            .map(|(&xi, &vi)| (xi + params.delta * vi).clamp(lb, ub) as f32)
            .collect();
        let minus: Vec<f32> = x
            .iter()
            .zip(&v)
            .map(|(&xi, &vi)| (xi - params.delta * vi).clamp(lb, ub) as f32)
            .collect();
        probe_rows.push(plus);
        probe_rows.push(minus);
        directions.push(v);
    }
    let probs = oracle.query_probs(&Mat::from_rows(&probe_rows)?)?;
    let mut grad = vec![0.0f64; dim];
    for (k, v) in directions.iter().enumerate() {
        let l_plus = margin_loss(&probs[2 * k], y_true);
        let l_minus = margin_loss(&probs[2 * k + 1], y_true);
        let scale = (l_plus - l_minus) / (2.0 * params.delta);
        for (g, &vi) in grad.iter_mut().zip(v) {
            *g += scale * vi;
        }
    }
    for g in &mut grad {
        *g /= pairs as f64;
    }
    Ok(grad)
}

/// Crafts one adversarial example against a black-box oracle.
///
/// Runs `nb_iter` descent steps on the margin loss, each projected into the
/// epsilon-ball around `x` and into bounds. Issues exactly
/// `nb_iter * spsa_samples` oracle queries.
pub fn spsa(
    oracle: &dyn QueryOracle,
    x: &[f32],
    y_true: usize,
    spec: &AttackSpec,
) -> Result<Vec<f32>> {
    spec.validate()?;
    let params = match &spec.kind {
        AttackKind::Spsa(p) => p.clone(),
        other => {
            return Err(Error::Validation(format!(
                "spsa called with a {} spec",
                other.label()
            )))
        }
    };
    if y_true >= oracle.num_classes() {
        return Err(Error::Validation(format!(
            "label {y_true} out of range for {} classes",
            oracle.num_classes()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut current: Vec<f64> = x.iter().map(|&v| v as f64).collect();
    for _ in 0..params.nb_iter {
        let grad = spsa_gradient_estimate(oracle, &current, y_true, spec.bounds, &params, &mut rng)?;
        let stepped: Vec<f64> = current
            .iter()
            .zip(&grad)
            .map(|(&xi, &g)| xi - params.learning_rate * g)
            .collect();
        current = project_ball_box(&stepped, x, spec.epsilon, spec.bounds);
        if params.early_stop {
            let probe: Vec<f32> = current.iter().map(|&v| v as f32).collect();
            let label = oracle.query_labels(&Mat::from_rows(&[probe])?)?[0];
            if label != y_true {
                break;
            }
        }
    }
    Ok(current.iter().map(|&v| v as f32).collect())
}

/// Crafts an adversarial dataset through the oracle, one SPSA run per
/// example. Per-example seeds derive from the attack's seed, so the output
/// is deterministic regardless of parallel scheduling.
pub fn spsa_craft(oracle: &dyn QueryOracle, data: &Dataset, spec: &AttackSpec) -> Result<Dataset> {
    spec.validate()?;
    let rows = par::try_map_indexed(data.len(), |i| {
        let mut per_example = spec.clone();
        per_example.seed = spec.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(i as u64);
        spsa(oracle, data.inputs.row(i), data.labels[i], &per_example)
    })?;
    Dataset::new(
        Mat::from_rows(&rows)?,
        data.labels.clone(),
        data.num_classes,
        data.bounds,
        &format!("{}-spsa", data.name),
        data.shape,
    )
}

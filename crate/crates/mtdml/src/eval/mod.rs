//! Evaluation metrics and harnesses: pairwise transferability, failed
//! repeated queries across pool renewals, robustness tables, and
//! hyper-parameter sweeps.

mod report;
mod robustness;
mod sweep;

pub use report::{write_run_manifest, RunManifest};
pub use robustness::{robustness_eval, EvalTarget, RobustnessRow, RobustnessSetup, RobustnessTable};
pub use sweep::{sweep, SweepDimension, SweepReport, SweepRow};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{accuracy, argmax, Model};
use crate::pool::StudentPool;
use crate::scheduler::predict;

/// Pairwise transfer rates between models. `rates[i][j]` is the fraction of
/// adversarial examples fooling model `i` that also fool model `j`;
/// undefined (diagonal, or no example fooled `i`) entries are `None`.
#[derive(Debug, Clone)]
pub struct TransferMatrix {
    pub rates: Vec<Vec<Option<f64>>>,
    /// Per-model count of successful adversarial examples.
    pub n_adv: Vec<usize>,
}

/// Average transferability across all ordered model pairs.
///
/// `adv_sets[i]` must hold adversarial examples crafted against
/// `models[i]`, carrying the true labels. Pairs with an undefined rate are
/// excluded from the average rather than counted as zero.
pub fn avg_transferability(
    models: &[Model],
    adv_sets: &[Dataset],
) -> Result<(TransferMatrix, f64)> {
    if models.len() < 2 {
        return Err(Error::Validation(format!(
            "transferability needs >= 2 models, got {}",
            models.len()
        )));
    }
    if models.len() != adv_sets.len() {
        return Err(Error::Shape(format!(
            "{} models vs {} adversarial sets",
            models.len(),
            adv_sets.len()
        )));
    }
    let n = models.len();

    // fooled[i] = indices in adv_sets[i] that fool model i.
    let mut fooled: Vec<Vec<usize>> = Vec::with_capacity(n);
    for (model, set) in models.iter().zip(adv_sets) {
        let preds = model.forward(&set.inputs)?;
        fooled.push(
            preds
                .iter()
                .enumerate()
                .filter(|(idx, p)| argmax(p) != set.labels[*idx])
                .map(|(idx, _)| idx)
                .collect(),
        );
    }
    let n_adv: Vec<usize> = fooled.iter().map(Vec::len).collect();
    if n_adv.iter().all(|&c| c == 0) {
        return Err(Error::UndefinedMetric(
            "no adversarial example fooled its own model".into(),
        ));
    }

    let mut rates: Vec<Vec<Option<f64>>> = vec![vec![None; n]; n];
    let mut sum = 0.0f64;
    let mut defined = 0usize;
    for i in 0..n {
        if n_adv[i] == 0 {
            continue;
        }
        for j in 0..n {
            if i == j {
                continue;
            }
            let mut still_fool = 0usize;
            for &idx in &fooled[i] {
                let p = models[j].forward_one(adv_sets[i].inputs.row(idx))?;
                if argmax(&p) != adv_sets[i].labels[idx] {
                    still_fool += 1;
                }
            }
            let rate = still_fool as f64 / n_adv[i] as f64;
            rates[i][j] = Some(rate);
            sum += rate;
            defined += 1;
        }
    }
    Ok((TransferMatrix { rates, n_adv }, sum / defined as f64))
}

/// FRQ outcome for one later pool.
#[derive(Debug, Clone, serde::Serialize)]
pub struct PoolFrq {
    pub pool_id: u64,
    /// Previously successful examples this pool classifies correctly.
    pub a: usize,
    pub frq: f64,
    /// Accuracy of this pool on the full adversarial set.
    pub robust_accuracy: f64,
    /// Examples the first pool got right that this pool gets wrong.
    pub newly_misclassified: usize,
}

/// Failed-repeated-queries report: how much of an adversarial set crafted
/// against the first pool stops working on later pools.
#[derive(Debug, Clone, serde::Serialize)]
pub struct FrqReport {
    /// Examples misclassified by the first pool (the repeatable queries).
    pub b: usize,
    pub first_pool_robust_accuracy: f64,
    pub per_pool: Vec<PoolFrq>,
    /// Mean of the per-pool FRQ values.
    pub mean_over_pools: f64,
    /// Pooled convention: total `a` over all later pools divided by
    /// `b * pools`.
    pub pooled: f64,
}

/// Computes FRQ of `adv_set` (crafted by querying `first_pool` only)
/// against each later pool.
pub fn frq(
    first_pool: &StudentPool,
    later_pools: &[StudentPool],
    adv_set: &Dataset,
) -> Result<FrqReport> {
    if adv_set.is_empty() {
        return Err(Error::Validation("empty adversarial set".into()));
    }
    if later_pools.is_empty() {
        return Err(Error::Validation("no later pools to compare against".into()));
    }
    let first_preds: Vec<usize> = pool_labels(first_pool, adv_set)?;
    let fooled: Vec<usize> = (0..adv_set.len())
        .filter(|&i| first_preds[i] != adv_set.labels[i])
        .collect();
    let b = fooled.len();
    if b == 0 {
        return Err(Error::UndefinedMetric(
            "no adversarial example fooled the first pool (b = 0)".into(),
        ));
    }
    let first_acc = 1.0 - b as f64 / adv_set.len() as f64;

    let mut per_pool = Vec::with_capacity(later_pools.len());
    for pool in later_pools {
        let preds = pool_labels(pool, adv_set)?;
        let a = fooled
            .iter()
            .filter(|&&i| preds[i] == adv_set.labels[i])
            .count();
        let newly_misclassified = (0..adv_set.len())
            .filter(|&i| first_preds[i] == adv_set.labels[i] && preds[i] != adv_set.labels[i])
            .count();
        let robust_accuracy = preds
            .iter()
            .zip(&adv_set.labels)
            .filter(|(p, y)| p == y)
            .count() as f64
            / adv_set.len() as f64;
        per_pool.push(PoolFrq {
            pool_id: pool.pool_id,
            a,
            frq: a as f64 / b as f64,
            robust_accuracy,
            newly_misclassified,
        });
    }
    let mean_over_pools = per_pool.iter().map(|p| p.frq).sum::<f64>() / per_pool.len() as f64;
    let pooled = per_pool.iter().map(|p| p.a).sum::<usize>() as f64
        / (b * per_pool.len()) as f64;
    Ok(FrqReport {
        b,
        first_pool_robust_accuracy: first_acc,
        per_pool,
        mean_over_pools,
        pooled,
    })
}

/// Scheduler-path labels of a pool over a dataset.
pub fn pool_labels(pool: &StudentPool, data: &Dataset) -> Result<Vec<usize>> {
    (0..data.len())
        .map(|i| predict(pool, data.inputs.row(i)).map(|o| o.label))
        .collect()
}

/// Scheduler-path accuracy of a pool over a dataset.
pub fn pool_accuracy(pool: &StudentPool, data: &Dataset) -> Result<f64> {
    let labels = pool_labels(pool, data)?;
    Ok(labels
        .iter()
        .zip(&data.labels)
        .filter(|(p, y)| p == y)
        .count() as f64
        / data.len() as f64)
}

/// Per-student accuracy gap guard used by tests and sweeps: max accuracy
/// drop of any student versus the base model.
pub fn worst_student_gap(base: &Model, pool: &StudentPool, test: &Dataset) -> Result<f64> {
    let base_acc = accuracy(base, test)?;
    let mut worst: f64 = 0.0;
    for student in &pool.students {
        let gap = base_acc - accuracy(student, test)?;
        worst = worst.max(gap);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests;

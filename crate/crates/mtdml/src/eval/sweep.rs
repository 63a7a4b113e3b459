//! Hyper-parameter sweeps: `p`, the noise scale lambda, and
//! transformed-versus-shared retraining data.
//!
//! Each grid point regenerates a pool from scratch and measures clean
//! accuracy, robust accuracy per attack (attacks crafted against the base
//! model), and the average transferability of a designated attack across
//! the students. Generation failures are recorded as failed points and the
//! sweep keeps going.

use super::{avg_transferability, pool_accuracy};
use crate::attacks::{craft_adv_dataset, AttackSpec};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::Model;
use crate::pool::{generate_pool, PoolConfig, PoolData, TransformMode};

/// What varies across the sweep.
#[derive(Debug, Clone)]
pub enum SweepDimension {
    /// p = 0..=n.
    P,
    /// Strictly increasing lambda grid; the sweep reports the first value
    /// whose pool fails the accuracy gate as the empirical lambda_max.
    Lambda { grid: Vec<f64> },
    /// Distinct transformed retraining sets versus the shared training set.
    TransformMode,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct SweepRow {
    pub dimension: String,
    pub value: String,
    pub status: String,
    pub seed: u64,
    pub n: usize,
    pub p: usize,
    pub lambda: f64,
    pub transform_mode: String,
    pub clean_accuracy: Option<f64>,
    /// (attack label, robust accuracy) per evaluated attack.
    pub attack_accuracies: Vec<(String, f64)>,
    pub avg_transferability: Option<f64>,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    /// First lambda whose pool generation failed, if the lambda dimension
    /// was swept and a failure occurred.
    pub lambda_max: Option<f64>,
}

impl SweepReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "dimension,value,status,seed,n,p,lambda,transform_mode,clean_accuracy,attack,attack_accuracy,avg_transferability\n",
        );
        for row in &self.rows {
            let base = format!(
                "{},{},{},{},{},{},{},{}",
                row.dimension,
                row.value,
                row.status,
                row.seed,
                row.n,
                row.p,
                row.lambda,
                row.transform_mode
            );
            let clean = row
                .clean_accuracy
                .map_or(String::new(), |a| format!("{a:.6}"));
            let transfer = row
                .avg_transferability
                .map_or(String::new(), |t| format!("{t:.6}"));
            if row.attack_accuracies.is_empty() {
                out.push_str(&format!("{base},{clean},,,{transfer}\n"));
            }
            for (attack, acc) in &row.attack_accuracies {
                out.push_str(&format!("{base},{clean},{attack},{acc:.6},{transfer}\n"));
            }
        }
        out
    }
}

/// Runs the sweep. `eval_attacks` are crafted against the base model and
/// scored through the pool; `transfer_attack` is crafted per student for
/// the transferability average.
pub fn sweep(
    base: &Model,
    cfg: &PoolConfig,
    data: &PoolData,
    dimension: &SweepDimension,
    eval_attacks: &[AttackSpec],
    transfer_attack: &AttackSpec,
) -> Result<SweepReport> {
    let points: Vec<PoolConfig> = match dimension {
        SweepDimension::P => (0..=cfg.n)
            .map(|p| PoolConfig {
                p,
                ..cfg.clone()
            })
            .collect(),
        SweepDimension::Lambda { grid } => {
            if grid.is_empty() {
                return Err(Error::Validation("empty lambda grid".into()));
            }
            if grid.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Validation(
                    "lambda grid must be strictly increasing".into(),
                ));
            }
            grid.iter()
                .map(|&lambda| PoolConfig {
                    lambda,
                    // The sweep reports each lambda's own recovery outcome.
                    retry_on_gate_failure: false,
                    ..cfg.clone()
                })
                .collect()
        }
        SweepDimension::TransformMode => [TransformMode::Distinct, TransformMode::Shared]
            .into_iter()
            .map(|transform_mode| PoolConfig {
                transform_mode,
                ..cfg.clone()
            })
            .collect(),
    };

    let mut rows = Vec::with_capacity(points.len());
    let mut lambda_max = None;
    for (idx, point_cfg) in points.iter().enumerate() {
        let value = match dimension {
            SweepDimension::P => point_cfg.p.to_string(),
            SweepDimension::Lambda { .. } => point_cfg.lambda.to_string(),
            SweepDimension::TransformMode => format!("{:?}", point_cfg.transform_mode),
        };
        let dimension_name = match dimension {
            SweepDimension::P => "p",
            SweepDimension::Lambda { .. } => "lambda",
            SweepDimension::TransformMode => "transform_mode",
        };
        let mut row = SweepRow {
            dimension: dimension_name.into(),
            value,
            status: "ok".into(),
            seed: point_cfg.seed,
            n: point_cfg.n,
            p: point_cfg.p,
            lambda: point_cfg.lambda,
            transform_mode: format!("{:?}", point_cfg.transform_mode),
            clean_accuracy: None,
            attack_accuracies: Vec::new(),
            avg_transferability: None,
        };
        match evaluate_point(base, point_cfg, data, idx as u64, eval_attacks, transfer_attack) {
            Ok((clean, attacks, transfer)) => {
                row.clean_accuracy = Some(clean);
                row.attack_accuracies = attacks;
                row.avg_transferability = transfer;
            }
            Err(Error::GenerationFailure(reason)) => {
                row.status = format!("generation_failed: {reason}");
                if matches!(dimension, SweepDimension::Lambda { .. }) && lambda_max.is_none() {
                    lambda_max = Some(point_cfg.lambda);
                }
            }
            Err(e) => return Err(e),
        }
        rows.push(row);
    }
    Ok(SweepReport { rows, lambda_max })
}

type PointOutcome = (f64, Vec<(String, f64)>, Option<f64>);

fn evaluate_point(
    base: &Model,
    cfg: &PoolConfig,
    data: &PoolData,
    point_idx: u64,
    eval_attacks: &[AttackSpec],
    transfer_attack: &AttackSpec,
) -> Result<PointOutcome> {
    let pool = generate_pool(base, cfg, data, point_idx)?;
    let clean = pool_accuracy(&pool, &data.test)?;

    let mut attack_accuracies = Vec::with_capacity(eval_attacks.len());
    for spec in eval_attacks {
        let adv = craft_adv_dataset(base, &data.test, spec)?;
        attack_accuracies.push((spec.kind.label().to_string(), pool_accuracy(&pool, &adv)?));
    }

    // Per-student adversarial sets for the transfer average.
    let transfer = if pool.len() >= 2 {
        let adv_sets: Vec<Dataset> = pool
            .students
            .iter()
            .map(|student| craft_adv_dataset(student, &data.test, transfer_attack))
            .collect::<Result<_>>()?;
        match avg_transferability(&pool.students, &adv_sets) {
            Ok((_, rate)) => Some(rate),
            Err(Error::UndefinedMetric(_)) => None,
            Err(e) => return Err(e),
        }
    } else {
        None
    };
    Ok((clean, attack_accuracies, transfer))
}

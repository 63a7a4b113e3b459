//! Adversarial-example generation.
//!
//! White-box attacks (FGSM, PGD, C&W) work directly on a [`Model`];
//! black-box attacks (SPSA, surrogate extraction) touch the target only
//! through the [`QueryOracle`] interface. Every attack output satisfies
//! `max|x' - x| <= epsilon + 1e-6` and stays inside the feature bounds.

mod copycat;
mod cw;
mod fgsm;
mod oracle;
mod pgd;
mod spsa;

pub use copycat::{copycat_extract, CopycatConfig, CopycatResult};
pub use cw::cw;
pub use fgsm::fgsm;
pub use oracle::{ModelOracle, PoolOracle, QueryOracle};
pub use pgd::pgd;
pub use spsa::{spsa, spsa_craft, spsa_gradient_estimate};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::nn::{Batch, Model};
use crate::par;

/// Attack family plus its solver parameters.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum AttackKind {
    Fgsm,
    Pgd(PgdParams),
    Cw(CwParams),
    Spsa(SpsaParams),
    /// Surrogate extraction followed by FGSM on the surrogate.
    CopycatFgsm,
    /// Surrogate extraction followed by C&W on the surrogate.
    CopycatCw,
}

impl AttackKind {
    pub fn label(&self) -> &'static str {
        match self {
            AttackKind::Fgsm => "fgsm",
            AttackKind::Pgd(_) => "pgd",
            AttackKind::Cw(_) => "cw",
            AttackKind::Spsa(_) => "spsa",
            AttackKind::CopycatFgsm => "copycat+fgsm",
            AttackKind::CopycatCw => "copycat+cw",
        }
    }
}

/// PGD solver parameters.
///
/// `eta` is a relative step size: the per-iteration step is
/// `eta * epsilon / max_iter` unless `step_override` pins an absolute step.
/// `eta_min` is carried in configuration and provenance output; its solver
/// semantics are not pinned down, so it has no algorithmic effect here.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PgdParams {
    pub eta: f64,
    pub eta_min: f64,
    pub max_iter: usize,
    pub step_override: Option<f64>,
}

impl Default for PgdParams {
    fn default() -> Self {
        Self {
            eta: 0.5,
            eta_min: 2.0,
            max_iter: 100,
            step_override: None,
        }
    }
}

impl PgdParams {
    pub fn step_size(&self, epsilon: f64) -> f64 {
        self.step_override
            .unwrap_or(self.eta * epsilon / self.max_iter.max(1) as f64)
    }
}

/// C&W solver parameters for the L2-regularized logit-margin objective.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CwParams {
    pub c: f64,
    pub kappa: f64,
    pub steps: usize,
    pub step_size: f64,
}

impl Default for CwParams {
    fn default() -> Self {
        Self {
            c: 5.0,
            kappa: 0.0,
            steps: 200,
            step_size: 0.01,
        }
    }
}

/// SPSA parameters: two-point gradient estimation with Rademacher probes.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SpsaParams {
    pub learning_rate: f64,
    /// Probe radius for the two-point estimator.
    pub delta: f64,
    /// Oracle queries spent per iteration; must be even (two per probe pair).
    pub spsa_samples: usize,
    pub nb_iter: usize,
    /// Stop at the first misclassified iterate, spending one extra
    /// bookkeeping label query per iteration. Leaves minimal perturbations
    /// instead of running the full iteration budget.
    #[serde(default)]
    pub early_stop: bool,
}

impl Default for SpsaParams {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            delta: 0.01,
            spsa_samples: 128,
            nb_iter: 10,
            early_stop: false,
        }
    }
}

/// Full attack description: family, budget, bounds, and seed.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AttackSpec {
    pub kind: AttackKind,
    /// L-infinity budget.
    pub epsilon: f64,
    pub bounds: (f64, f64),
    /// Optional target class; `None` runs the untargeted attack.
    pub targeted: Option<usize>,
    pub seed: u64,
}

impl AttackSpec {
    pub fn new(kind: AttackKind, epsilon: f64) -> Self {
        Self {
            kind,
            epsilon,
            bounds: (0.0, 1.0),
            targeted: None,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.epsilon <= 0.0 || !self.epsilon.is_finite() {
            return Err(Error::Validation(format!(
                "attack epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if self.bounds.0 >= self.bounds.1 {
            return Err(Error::Validation(format!(
                "bad attack bounds [{}, {}]",
                self.bounds.0, self.bounds.1
            )));
        }
        match &self.kind {
            AttackKind::Pgd(p) if p.max_iter < 1 => {
                Err(Error::Validation("pgd max_iter must be >= 1".into()))
            }
            AttackKind::Cw(p) if p.steps < 1 || p.c <= 0.0 || p.step_size <= 0.0 => Err(
                Error::Validation("cw needs steps >= 1, c > 0, step_size > 0".into()),
            ),
            AttackKind::Spsa(p) if p.spsa_samples == 0 || p.spsa_samples % 2 != 0 => Err(
                Error::Validation("spsa_samples must be even and positive".into()),
            ),
            _ => Ok(()),
        }
    }

    /// A compact provenance string for CSV reports.
    pub fn provenance(&self) -> String {
        format!(
            "{}(eps={},seed={})",
            self.kind.label(),
            self.epsilon,
            self.seed
        )
    }
}

/// Projects a candidate onto the L-infinity ball around `origin` and into
/// the feature box. Returns the projected point in f64.
pub(crate) fn project_ball_box(
    candidate: &[f64],
    origin: &[f32],
    epsilon: f64,
    bounds: (f64, f64),
) -> Vec<f64> {
    let (lb, ub) = bounds;
    candidate
        .iter()
        .zip(origin)
        .map(|(&v, &o)| {
            let delta = (v - o as f64).clamp(-epsilon, epsilon);
            (o as f64 + delta).clamp(lb, ub)
        })
        .collect()
}

/// Runs a white-box attack over every row of the batch, in parallel.
///
/// `CopycatFgsm`/`CopycatCw` are composite pipelines driven by the eval
/// harness and are rejected here.
pub fn run_white_box(model: &Model, batch: &Batch, spec: &AttackSpec) -> Result<Mat> {
    spec.validate()?;
    match &spec.kind {
        AttackKind::Fgsm => fgsm(model, batch, spec.epsilon, spec),
        AttackKind::Pgd(_) => pgd(model, batch, spec),
        AttackKind::Cw(_) => cw(model, batch, spec),
        other => Err(Error::Validation(format!(
            "{} is not a white-box attack",
            other.label()
        ))),
    }
}

/// Crafts an adversarial dataset against `model`: same labels and metadata,
/// perturbed features.
pub fn craft_adv_dataset(model: &Model, data: &Dataset, spec: &AttackSpec) -> Result<Dataset> {
    let batch = Batch::from_dataset(data);
    let adv = run_white_box(model, &batch, spec)?;
    Dataset::new(
        adv,
        data.labels.clone(),
        data.num_classes,
        data.bounds,
        &format!("{}-{}", data.name, spec.kind.label()),
        data.shape,
    )
}

/// Per-example cross-entropy gradient w.r.t. the input, for attack use.
///
/// Untargeted attacks ascend the loss of the true label; targeted attacks
/// descend the loss of the target label. The returned rows carry the sign
/// convention such that stepping `x + step * sign(row)` serves the attack
/// goal in both cases.
pub(crate) fn attack_gradient_rows(
    model: &Model,
    batch: &Batch,
    targeted: Option<usize>,
) -> Result<Vec<Vec<f64>>> {
    if batch.is_empty() {
        return Err(Error::Validation("attack on an empty batch".into()));
    }
    if let Some(t) = targeted {
        if t >= model.num_classes() {
            return Err(Error::Validation(format!(
                "target class {t} out of range for {} classes",
                model.num_classes()
            )));
        }
    }
    let probs = model.forward(&batch.inputs)?;
    Ok(par::map_indexed(batch.len(), |i| {
        let mut dlogits = probs[i].clone();
        match targeted {
            // Ascend J(theta, x, y_true): d/dz = p - onehot(y_true).
            None => dlogits[batch.labels[i]] -= 1.0,
            // Descend J(theta, x, t): negate the gradient of the target loss.
            Some(t) => {
                for v in dlogits.iter_mut() {
                    *v = -*v;
                }
                dlogits[t] += 1.0;
            }
        }
        model.input_grad_from_logit_grad(batch.inputs.row(i), &dlogits)
    }))
}

//! Robustness tables: accuracy of a target under each attack.
//!
//! White-box attacks are crafted against the adversary's white-box surface
//! (the base model); black-box attacks only touch the target through its
//! query interface.

use crate::attacks::{
    copycat_extract, craft_adv_dataset, spsa_craft, AttackKind, AttackSpec, CopycatConfig,
    ModelOracle, QueryOracle,
};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{accuracy, Model};
use crate::server::client::{PredictClient, RemoteOracle};

/// What the attacks are aimed at.
pub enum EvalTarget<'a> {
    /// A fixed model evaluated in process.
    Fixed(&'a Model),
    /// A live serving endpoint.
    Endpoint { addr: String, num_classes: usize },
}

impl EvalTarget<'_> {
    fn describe(&self) -> String {
        match self {
            EvalTarget::Fixed(m) => format!("fixed:{}", m.arch_id()),
            EvalTarget::Endpoint { addr, .. } => format!("endpoint:{addr}"),
        }
    }

    /// Accuracy of the target on a dataset.
    fn accuracy(&self, data: &Dataset) -> Result<f64> {
        match self {
            EvalTarget::Fixed(model) => accuracy(model, data),
            EvalTarget::Endpoint { addr, .. } => {
                let mut client = PredictClient::connect(addr)?;
                let mut correct = 0usize;
                for i in 0..data.len() {
                    let input: Vec<f64> =
                        data.inputs.row(i).iter().map(|&v| v as f64).collect();
                    if client.label(&input)? == data.labels[i] {
                        correct += 1;
                    }
                }
                Ok(correct as f64 / data.len() as f64)
            }
        }
    }

    fn oracle(&self) -> Result<Box<dyn QueryOracle + '_>> {
        match self {
            EvalTarget::Fixed(model) => Ok(Box::new(ModelOracle::new(model))),
            EvalTarget::Endpoint { addr, num_classes } => {
                Ok(Box::new(RemoteOracle::connect(addr, *num_classes)?))
            }
        }
    }
}

/// Shared evaluation context.
pub struct RobustnessSetup<'a> {
    /// The adversary's white-box surface (the base model).
    pub white_box: &'a Model,
    pub x_test: &'a Dataset,
    /// Probe data for surrogate extraction (transformed training data).
    pub copycat_probe: Option<&'a Dataset>,
    pub copycat_cfg: Option<CopycatConfig>,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct RobustnessRow {
    pub attack: String,
    pub accuracy: f64,
    pub n: usize,
    pub provenance: String,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct RobustnessTable {
    pub target: String,
    pub rows: Vec<RobustnessRow>,
}

impl RobustnessTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("target,attack,accuracy,n,provenance\n");
        for row in &self.rows {
            out.push_str(&format!(
                "{},{},{:.6},{},{}\n",
                self.target, row.attack, row.accuracy, row.n, row.provenance
            ));
        }
        out
    }

    pub fn accuracy_of(&self, attack: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.attack == attack)
            .map(|r| r.accuracy)
    }
}

/// Runs "no_attack" plus every listed attack against the target and
/// returns one accuracy row per attack.
///
/// An endpoint failure midway yields a partial-results error naming how
/// many rows had completed.
pub fn robustness_eval(
    target: &EvalTarget,
    setup: &RobustnessSetup,
    attacks: &[AttackSpec],
) -> Result<RobustnessTable> {
    let total = attacks.len() + 1;
    let mut rows: Vec<RobustnessRow> = Vec::with_capacity(total);

    let clean = target
        .accuracy(setup.x_test)
        .map_err(|e| partial(&rows, total, e))?;
    rows.push(RobustnessRow {
        attack: "no_attack".into(),
        accuracy: clean,
        n: setup.x_test.len(),
        provenance: "clean".into(),
    });

    for spec in attacks {
        let adv = build_attack_set(target, setup, spec).map_err(|e| partial(&rows, total, e))?;
        let acc = target
            .accuracy(&adv)
            .map_err(|e| partial(&rows, total, e))?;
        rows.push(RobustnessRow {
            attack: spec.kind.label().into(),
            accuracy: acc,
            n: adv.len(),
            provenance: spec.provenance(),
        });
    }
    Ok(RobustnessTable {
        target: target.describe(),
        rows,
    })
}

fn build_attack_set(
    target: &EvalTarget,
    setup: &RobustnessSetup,
    spec: &AttackSpec,
) -> Result<Dataset> {
    match &spec.kind {
        AttackKind::Fgsm | AttackKind::Pgd(_) | AttackKind::Cw(_) => {
            craft_adv_dataset(setup.white_box, setup.x_test, spec)
        }
        AttackKind::Spsa(_) => {
            let oracle = target.oracle()?;
            spsa_craft(oracle.as_ref(), setup.x_test, spec)
        }
        AttackKind::CopycatFgsm | AttackKind::CopycatCw => {
            let probe = setup.copycat_probe.ok_or_else(|| {
                Error::Validation("copycat attack listed but no probe set given".into())
            })?;
            let cfg = setup.copycat_cfg.clone().ok_or_else(|| {
                Error::Validation("copycat attack listed but no copycat config given".into())
            })?;
            let oracle = target.oracle()?;
            let extraction = copycat_extract(oracle.as_ref(), probe, &cfg)?;
            let mut inner = spec.clone();
            inner.kind = match spec.kind {
                AttackKind::CopycatFgsm => AttackKind::Fgsm,
                _ => AttackKind::Cw(Default::default()),
            };
            craft_adv_dataset(&extraction.surrogate, setup.x_test, &inner)
        }
    }
}

fn partial(rows: &[RobustnessRow], total: usize, err: Error) -> Error {
    match err {
        e @ Error::PartialResults { .. } => e,
        other => Error::PartialResults {
            completed: rows.len(),
            total,
            reason: other.to_string(),
        },
    }
}

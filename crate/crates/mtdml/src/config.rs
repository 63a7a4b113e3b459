//! Run configuration: one JSON document mirrors every CLI flag, and flags
//! override individual fields.

use crate::attacks::{AttackKind, AttackSpec, CwParams, SpsaParams};
use crate::data::{gen_blobs, load_csv, load_idx, Dataset};
use crate::error::Result;
use crate::nn::{ArchSpec, TrainConfig};
use crate::pool::PoolConfig;
use crate::server::ServeConfig;

use std::path::{Path, PathBuf};

/// Where a dataset comes from.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    Blobs {
        num_per_class: usize,
        k: usize,
        spread: f64,
        seed: u64,
    },
    Idx {
        images: PathBuf,
        labels: PathBuf,
    },
    Csv {
        path: PathBuf,
    },
}

impl DataSource {
    pub fn load(&self) -> Result<Dataset> {
        match self {
            DataSource::Blobs {
                num_per_class,
                k,
                spread,
                seed,
            } => gen_blobs(*num_per_class, *k, *spread, *seed),
            DataSource::Idx { images, labels } => load_idx(images, labels),
            DataSource::Csv { path } => load_csv(path, (0.0, 1.0)),
        }
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct DataConfig {
    pub train: DataSource,
    pub test: DataSource,
}

/// Full run configuration.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataConfig,
    /// Hidden layer widths of the base architecture.
    pub hidden: Vec<usize>,
    pub train: TrainConfig,
    pub pool: PoolConfig,
    pub serve: ServeConfig,
    /// Attacks evaluated by the robustness commands.
    pub attacks: Vec<AttackSpec>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let seed = 1u64;
        Self {
            seed,
            data: DataConfig {
                train: DataSource::Blobs {
                    num_per_class: 100,
                    k: 3,
                    spread: 0.05,
                    seed,
                },
                test: DataSource::Blobs {
                    num_per_class: 50,
                    k: 3,
                    spread: 0.05,
                    seed: seed + 1,
                },
            },
            hidden: vec![16],
            train: TrainConfig {
                lr: 0.5,
                batch_size: 16,
                epochs: 40,
                seed,
            },
            pool: PoolConfig::desk_default(seed),
            serve: ServeConfig::default(),
            attacks: vec![
                AttackSpec::new(AttackKind::Fgsm, 0.3).with_seed(seed),
                AttackSpec::new(AttackKind::Cw(CwParams::default()), 0.3).with_seed(seed),
                AttackSpec::new(AttackKind::Spsa(SpsaParams::default()), 0.3).with_seed(seed),
            ],
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => Self::load(p),
            None => Ok(Self::default()),
        }
    }

    pub fn arch_for(&self, data: &Dataset) -> ArchSpec {
        ArchSpec::dense(data.dim(), self.hidden.clone(), data.num_classes)
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

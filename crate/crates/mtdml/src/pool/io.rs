//! Pool serialization: a directory of model containers plus a JSON manifest.

use super::StudentPool;
use crate::data::TransformSpec;
use crate::error::{Error, Result};
use crate::nn::serialize::{load_model, save_model};

use std::path::Path;

#[derive(serde::Serialize, serde::Deserialize)]
struct PoolManifest {
    pool_id: u64,
    seed: u64,
    n: usize,
    adv_flags: Vec<bool>,
    transform_specs: Vec<TransformSpec>,
    gen_duration_secs: f64,
    clean_accuracies: Vec<f64>,
}

/// Writes `manifest.json` plus `student-<i>.bin` under `dir`.
pub fn save_pool(pool: &StudentPool, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let manifest = PoolManifest {
        pool_id: pool.pool_id,
        seed: pool.gen_seed,
        n: pool.len(),
        adv_flags: pool.adv_flags.clone(),
        transform_specs: pool.transform_specs.clone(),
        gen_duration_secs: pool.gen_duration_secs,
        clean_accuracies: pool.clean_accuracies.clone(),
    };
    std::fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    for (i, student) in pool.students.iter().enumerate() {
        save_model(student, &dir.join(format!("student-{i}.bin")))?;
    }
    Ok(())
}

pub fn load_pool(dir: &Path) -> Result<StudentPool> {
    let manifest: PoolManifest =
        serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json"))?)?;
    let students = (0..manifest.n)
        .map(|i| load_model(&dir.join(format!("student-{i}.bin"))))
        .collect::<Result<Vec<_>>>()?;
    StudentPool::from_parts(
        students,
        manifest.adv_flags,
        manifest.transform_specs,
        manifest.pool_id,
        manifest.seed,
        manifest.gen_duration_secs,
        manifest.clean_accuracies,
    )
}

/// Loads every `pool-*` subdirectory of `dir`, ordered by pool id.
pub fn load_pools(dir: &Path) -> Result<Vec<StudentPool>> {
    let mut pools = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let entry = entry?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if entry.file_type()?.is_dir() && name.starts_with("pool-") {
            pools.push(load_pool(&entry.path())?);
        }
    }
    if pools.is_empty() {
        return Err(Error::Validation(format!(
            "no pool-* directories under {}",
            dir.display()
        )));
    }
    pools.sort_by_key(|p| p.pool_id);
    Ok(pools)
}

/// Canonical subdirectory name for a pool.
pub fn pool_dir_name(pool_id: u64) -> String {
    format!("pool-{pool_id:04}")
}

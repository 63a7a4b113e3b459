//! Run manifests: every CSV a command writes gets a JSON sidecar with the
//! full configuration needed to regenerate it.

use crate::error::Result;
use std::path::Path;

#[derive(Debug, Clone, serde::Serialize)]
pub struct RunManifest {
    pub command: String,
    pub seed: u64,
    /// Full serialized configuration of the run.
    pub config: serde_json::Value,
    /// Paths of the artifacts this run produced.
    pub outputs: Vec<String>,
}

pub fn write_run_manifest(manifest: &RunManifest, path: &Path) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(manifest)?)?;
    Ok(())
}

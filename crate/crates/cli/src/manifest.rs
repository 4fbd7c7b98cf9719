//! Per-stage run manifests: config snapshot, input/output hashes, timing.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use styleforge_core::util;

use crate::errors::config_err;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub stage: String,
    pub config: serde_json::Value,
    /// Input path to content hash.
    pub inputs: BTreeMap<String, String>,
    /// Output path to content hash.
    pub outputs: BTreeMap<String, String>,
    pub wall_ms: u64,
    pub backend: String,
    pub seeds: BTreeMap<String, u64>,
}

/// Tracks one stage run: validates inputs up front (before anything is
/// written), hashes declared files, and writes the manifest at the end.
pub struct StageRun {
    stage: String,
    backend: String,
    config: serde_json::Value,
    inputs: BTreeMap<String, String>,
    outputs: Vec<PathBuf>,
    seeds: BTreeMap<String, u64>,
    started: Instant,
}

impl StageRun {
    pub fn new(stage: &str, backend: &str, config: serde_json::Value) -> StageRun {
        StageRun {
            stage: stage.to_string(),
            backend: backend.to_string(),
            config,
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
            seeds: BTreeMap::new(),
            started: Instant::now(),
        }
    }

    /// Declares and hashes an input file; a missing path is an error before
    /// the stage writes anything.
    pub fn input_file(&mut self, path: &Path) -> Result<()> {
        if !path.is_file() {
            return Err(config_err(format!("missing input: {}", path.display())));
        }
        let hash = util::hash_file(path).with_context(|| format!("hashing {}", path.display()))?;
        self.inputs.insert(path.display().to_string(), hash);
        Ok(())
    }

    /// Declares an input directory by hashing the sorted list of its files'
    /// hashes.
    pub fn input_dir(&mut self, dir: &Path) -> Result<()> {
        if !dir.is_dir() {
            return Err(config_err(format!("missing input: {}", dir.display())));
        }
        let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file())
            .collect();
        entries.sort();
        let mut combined = String::new();
        for path in &entries {
            combined.push_str(&util::hash_file(path)?);
        }
        self.inputs.insert(
            dir.display().to_string(),
            util::content_hash(combined.as_bytes()),
        );
        Ok(())
    }

    pub fn seed(&mut self, name: &str, value: u64) {
        self.seeds.insert(name.to_string(), value);
    }

    /// Registers an output path to hash once the stage finishes.
    pub fn output_file(&mut self, path: &Path) {
        self.outputs.push(path.to_path_buf());
    }

    /// Hashes outputs and writes `<manifest_dir>/<stage>.manifest.json`.
    pub fn finish(self, manifest_dir: &Path) -> Result<RunManifest> {
        let mut outputs = BTreeMap::new();
        for path in &self.outputs {
            let hash = util::hash_file(path)
                .with_context(|| format!("hashing output {}", path.display()))?;
            outputs.insert(path.display().to_string(), hash);
        }
        let manifest = RunManifest {
            stage: self.stage.clone(),
            config: self.config,
            inputs: self.inputs,
            outputs,
            wall_ms: self.started.elapsed().as_millis() as u64,
            backend: self.backend,
            seeds: self.seeds,
        };
        std::fs::create_dir_all(manifest_dir)?;
        let path = manifest_dir.join(format!("{}.manifest.json", self.stage));
        util::write_json_pretty(&path, &manifest)?;
        Ok(manifest)
    }
}

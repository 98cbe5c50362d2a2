use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Provenance attached to every command's outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Fully resolved settings, defaults included.
    pub config: serde_json::Value,
    /// SHA-256 of each input file, keyed by the path as given.
    pub inputs: BTreeMap<String, String>,
    /// SHA-256 of each output file written before the manifest.
    #[serde(default)]
    pub outputs: BTreeMap<String, String>,
    pub seed: u64,
    pub version: String,
    pub threads: usize,
    pub wall_clock_seconds: f64,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(sha256_hex(&bytes))
}

pub struct ManifestBuilder {
    command: String,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
    started: Instant,
}

impl ManifestBuilder {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.to_string(),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            started: Instant::now(),
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.insert(path.display().to_string(), file_digest(path)?);
        Ok(())
    }

    pub fn output(&mut self, name: &str, bytes: &[u8]) {
        self.outputs.insert(name.to_string(), sha256_hex(bytes));
    }

    pub fn finish(&self, config: &impl Serialize, seed: u64) -> Result<RunManifest> {
        Ok(RunManifest {
            command: self.command.clone(),
            config: serde_json::to_value(config)?,
            inputs: self.inputs.clone(),
            outputs: self.outputs.clone(),
            seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            threads: rayon::current_num_threads(),
            wall_clock_seconds: self.started.elapsed().as_secs_f64(),
        })
    }
}

//! Run manifests written beside every command's outputs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::fs::atomic_write;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub seed: u64,
    pub config_file: Option<String>,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub hyperparameters: BTreeMap<String, serde_json::Value>,
    /// Wall-clock seconds per phase. The only field that differs between
    /// otherwise identical runs.
    pub timings: BTreeMap<String, f64>,
}

impl RunManifest {
    pub fn new(command: &str, seed: u64, config_file: Option<&Path>) -> Self {
        Self {
            command: command.to_owned(),
            tool_version: env!("CARGO_PKG_VERSION").to_owned(),
            seed,
            config_file: config_file.map(|p| p.display().to_string()),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            hyperparameters: BTreeMap::new(),
            timings: BTreeMap::new(),
        }
    }

    pub fn input(&mut self, key: &str, path: &Path) -> &mut Self {
        self.inputs.insert(key.to_owned(), path.display().to_string());
        self
    }

    pub fn output(&mut self, key: &str, path: &Path) -> &mut Self {
        self.outputs.insert(key.to_owned(), path.display().to_string());
        self
    }

    pub fn param(&mut self, key: &str, value: impl Serialize) -> &mut Self {
        self.hyperparameters
            .insert(key.to_owned(), serde_json::to_value(value).unwrap_or(serde_json::Value::Null));
        self
    }

    pub fn time(&mut self, key: &str, since: Instant) -> &mut Self {
        self.timings.insert(key.to_owned(), since.elapsed().as_secs_f64());
        self
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        atomic_write(path, &bytes)
    }
}

/// `dir/name.csv` → `dir/name.manifest.json`.
pub fn manifest_path(output: &Path) -> PathBuf {
    output.with_extension("manifest.json")
}

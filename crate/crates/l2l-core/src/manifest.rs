//! Run manifests: a JSON record of everything a command consumed and
//! produced, with SHA-256 content hashes, so any run can be audited and
//! replayed. Manifests contain no timestamps or host state — two runs with
//! identical inputs, config and seed write byte-identical manifests (wall
//! times belong in logs, not here).

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::checkpoint::file_sha256;
use crate::error::{Error, Result};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// One run's complete provenance record.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RunManifest {
    /// Deterministic id derived from (command, seed, config snapshot).
    pub run_id: String,
    pub command: String,
    pub tool_version: String,
    pub seed: u64,
    /// Full configuration snapshot for replay.
    pub config: serde_json::Value,
    /// Input file path -> SHA-256, sorted by path.
    pub inputs: BTreeMap<String, String>,
    /// Checkpoint file path -> SHA-256, sorted by path.
    pub checkpoints: BTreeMap<String, String>,
    /// Every file this run emitted, path -> SHA-256, sorted by path.
    pub artifacts: BTreeMap<String, String>,
    /// Free-form per-run facts (counts, metrics); keys sorted.
    pub notes: BTreeMap<String, serde_json::Value>,
}

impl RunManifest {
    pub fn new(command: &str, seed: u64, config: serde_json::Value) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(command.as_bytes());
        hasher.update(seed.to_le_bytes());
        hasher.update(config.to_string().as_bytes());
        let digest = hasher.finalize();
        let run_id: String = digest[..6].iter().map(|b| format!("{b:02x}")).collect();
        RunManifest {
            run_id,
            command: command.to_string(),
            tool_version: TOOL_VERSION.to_string(),
            seed,
            config,
            inputs: BTreeMap::new(),
            checkpoints: BTreeMap::new(),
            artifacts: BTreeMap::new(),
            notes: BTreeMap::new(),
        }
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        self.inputs.insert(display(path), file_sha256(path)?);
        Ok(())
    }

    pub fn add_checkpoint(&mut self, path: &Path) -> Result<()> {
        self.checkpoints.insert(display(path), file_sha256(path)?);
        Ok(())
    }

    pub fn add_artifact(&mut self, path: &Path) -> Result<()> {
        self.artifacts.insert(display(path), file_sha256(path)?);
        Ok(())
    }

    pub fn add_note(&mut self, key: &str, value: impl Into<serde_json::Value>) {
        self.notes.insert(key.to_string(), value.into());
    }

    /// Serialize deterministically (sorted maps, stable pretty-printing).
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json().into_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<RunManifest> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config {
            key: path.display().to_string(),
            message: format!("manifest parse error: {e}"),
        })
    }

    /// Check that every listed artifact still exists with its recorded
    /// hash. Returns the paths that fail.
    pub fn verify_artifacts(&self) -> Result<Vec<String>> {
        let mut bad = Vec::new();
        for (p, expected) in &self.artifacts {
            match file_sha256(Path::new(p)) {
                Ok(actual) if &actual == expected => {}
                _ => bad.push(p.clone()),
            }
        }
        Ok(bad)
    }
}

fn display(path: &Path) -> String {
    // Keep only the file name and its parent directory name so manifests do
    // not depend on the absolute location of the working tree.
    let name = path.file_name().map(|s| s.to_string_lossy().to_string());
    let parent = path
        .parent()
        .and_then(|p| p.file_name())
        .map(|s| s.to_string_lossy().to_string());
    match (parent, name) {
        (Some(p), Some(n)) => format!("{p}/{n}"),
        (None, Some(n)) => n,
        _ => path.display().to_string(),
    }
}

//! Run manifests: what a subcommand was asked to do, written before it starts
//! and completed with output hashes when it finishes.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use wlac::jsonl::write_json;
use wlac::model::file_hash;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub config: Value,
    /// Input path to its SHA-256.
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
    pub seed: Option<u64>,
    /// Output artifact path to its SHA-256; empty until the run completes.
    pub artifacts: BTreeMap<String, String>,
    pub completed: bool,
}

pub struct ManifestWriter {
    path: PathBuf,
    manifest: RunManifest,
}

impl ManifestWriter {
    pub fn begin(
        path: impl Into<PathBuf>,
        subcommand: &str,
        config: Value,
        inputs: &[&Path],
        outputs: &[&Path],
        seed: Option<u64>,
    ) -> wlac::Result<Self> {
        let mut hashes = BTreeMap::new();
        for p in inputs {
            hashes.insert(p.display().to_string(), file_hash(p)?);
        }
        let writer = Self {
            path: path.into(),
            manifest: RunManifest {
                subcommand: subcommand.into(),
                config,
                inputs: hashes,
                outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
                seed,
                artifacts: BTreeMap::new(),
                completed: false,
            },
        };
        if let Some(dir) = writer.path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| wlac::Error::io(dir, e))?;
        }
        write_json(&writer.path, &writer.manifest)?;
        Ok(writer)
    }

    pub fn finish(mut self, artifacts: &[&Path]) -> wlac::Result<()> {
        for p in artifacts {
            self.manifest.artifacts.insert(p.display().to_string(), file_hash(p)?);
        }
        self.manifest.completed = true;
        write_json(&self.path, &self.manifest)
    }
}

/// Manifest location for a single-file output.
pub fn beside(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    out.with_file_name(name)
}

//! Metrics files and run manifests.
//!
//! A metrics file is one JSON object. Everything in it is a function of the
//! manifest (command, effective config, seeds, inputs, outputs), so identical
//! manifests give byte-identical files. Wall-clock timestamps go to a sidecar
//! `<metrics>.manifest.json` instead.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::harness::ablation::AblationReport;
use crate::harness::{Aggregate, SeedResult};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    /// Effective config in canonical text form.
    pub config: String,
    pub seeds: Vec<u64>,
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("manifest serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

/// Sidecar record with the non-deterministic parts of a run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub manifest_hash: String,
    pub manifest: RunManifest,
    pub started_unix: u64,
    pub finished_unix: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Modules {
    pub ccva: bool,
    pub fdbo: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsFile {
    pub manifest_hash: String,
    pub manifest: RunManifest,
    pub modules: Modules,
    pub k_shot: usize,
    #[serde(default)]
    pub seeds: Vec<SeedResult>,
    #[serde(default)]
    pub aggregate: Option<Aggregate>,
    #[serde(default)]
    pub ablation: Option<AblationReport>,
}

impl MetricsFile {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("metrics serialize");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(format!("metrics file: {e}")))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

pub fn sidecar_path(metrics: &Path) -> PathBuf {
    let mut name = metrics.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    metrics.with_file_name(name)
}

pub fn write_sidecar(metrics: &Path, record: &ManifestRecord) -> Result<()> {
    let path = sidecar_path(metrics);
    let mut s = serde_json::to_string_pretty(record).map_err(|e| Error::Parse(e.to_string()))?;
    s.push('\n');
    std::fs::write(&path, s).map_err(|e| Error::io(&path, e))
}

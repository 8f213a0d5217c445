//! `manifest.json`: what each stage read and wrote, with content hashes, so a
//! rerun with unchanged inputs can be skipped.

use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::Scale;
use crate::error::{CliError, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArtifactRecord {
    /// Relative to the run directory.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    /// Hash over the config and every upstream artifact the stage read.
    pub input_hash: String,
    pub duration_secs: f64,
    pub artifacts: Vec<ArtifactRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config_hash: String,
    pub seed: u64,
    pub scale: Scale,
    pub stages: BTreeMap<String, StageRecord>,
}

pub fn sha256_file(path: &Path) -> Result<(String, u64)> {
    let mut file = fs::File::open(path).map_err(CliError::io(format!("open {}", path.display())))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    let mut total = 0u64;
    loop {
        let n = file.read(&mut buf).map_err(CliError::io(format!("read {}", path.display())))?;
        if n == 0 {
            break;
        }
        total += n as u64;
        hasher.update(&buf[..n]);
    }
    Ok((hex::encode(hasher.finalize()), total))
}

impl RunManifest {
    pub fn new(config_hash: String, seed: u64, scale: Scale) -> Self {
        Self { tool_version: env!("CARGO_PKG_VERSION").to_string(), config_hash, seed, scale, stages: BTreeMap::new() }
    }

    /// Reads the manifest of `dir`, or starts an empty one.
    pub fn load_or_new(dir: &Path, config_hash: &str, seed: u64, scale: Scale) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let mut m = if path.exists() {
            let text = fs::read_to_string(&path).map_err(CliError::io(format!("read {}", path.display())))?;
            serde_json::from_str(&text)?
        } else {
            Self::new(config_hash.to_string(), seed, scale)
        };
        m.tool_version = env!("CARGO_PKG_VERSION").to_string();
        m.config_hash = config_hash.to_string();
        m.seed = seed;
        m.scale = scale;
        Ok(m)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_FILE);
        let tmp = dir.join(format!("{MANIFEST_FILE}.tmp"));
        fs::write(&tmp, serde_json::to_string_pretty(self)?).map_err(CliError::io(format!("write {}", tmp.display())))?;
        fs::rename(&tmp, &path).map_err(CliError::io(format!("rename to {}", path.display())))
    }

    /// True when `stage` last ran on the same inputs and its outputs are untouched.
    pub fn is_current(&self, dir: &Path, stage: &str, input_hash: &str) -> bool {
        let Some(rec) = self.stages.get(stage) else { return false };
        rec.input_hash == input_hash
            && rec.artifacts.iter().all(|a| matches!(sha256_file(&dir.join(&a.path)), Ok((h, _)) if h == a.sha256))
    }

    pub fn record(&mut self, dir: &Path, stage: &str, input_hash: String, duration_secs: f64, paths: &[String]) -> Result<()> {
        let artifacts = paths
            .iter()
            .map(|p| {
                let (sha256, bytes) = sha256_file(&dir.join(p))?;
                Ok(ArtifactRecord { path: p.clone(), sha256, bytes })
            })
            .collect::<Result<Vec<_>>>()?;
        self.stages.insert(stage.to_string(), StageRecord { input_hash, duration_secs, artifacts });
        Ok(())
    }

    pub fn artifact_count(&self) -> usize {
        self.stages.values().map(|s| s.artifacts.len()).sum()
    }
}

//! `manifest.json`: producing stage, config hash and content digest of
//! every artifact in the output directory.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactRecord {
    pub stage: String,
    pub config_hash: String,
    pub sha256: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub artifacts: BTreeMap<String, ArtifactRecord>,
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Core(unicon::Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

pub fn file_sha256(path: &Path) -> CliResult<String> {
    let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

impl Manifest {
    pub fn load(dir: &Path) -> CliResult<Self> {
        let path = dir.join(MANIFEST_FILE);
        if !path.exists() {
            return Ok(Manifest::default());
        }
        let text = std::fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
        serde_json::from_str(&text).map_err(|e| {
            CliError::Core(unicon::Error::Format {
                source_name: path.display().to_string(),
                message: e.to_string(),
            })
        })
    }

    pub fn save(&self, dir: &Path) -> CliResult<()> {
        let path = dir.join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| io_err(&path, e))
    }

    /// Records `names` (relative to `dir`) as produced by `stage`.
    pub fn record(&mut self, dir: &Path, stage: &str, config_hash: &str, names: &[&str]) -> CliResult<()> {
        for name in names {
            self.artifacts.insert(
                name.to_string(),
                ArtifactRecord {
                    stage: stage.to_string(),
                    config_hash: config_hash.to_string(),
                    sha256: file_sha256(&dir.join(name))?,
                },
            );
        }
        Ok(())
    }

    /// Distinct config hashes among the recorded artifacts still present in `dir`.
    pub fn hashes(&self, dir: &Path) -> BTreeMap<String, Vec<String>> {
        let mut out: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for (name, rec) in &self.artifacts {
            if dir.join(name).exists() {
                out.entry(rec.config_hash.clone()).or_default().push(name.clone());
            }
        }
        out
    }

    /// Fails unless every present artifact was produced under `config_hash`
    /// and still has its recorded digest.
    pub fn check_consistent(&self, dir: &Path, config_hash: &str) -> CliResult<()> {
        let mut problems = Vec::new();
        for (name, rec) in &self.artifacts {
            let path = dir.join(name);
            if !path.exists() {
                continue;
            }
            if rec.config_hash != config_hash {
                problems.push(format!("{name} (stage {}) has config hash {}", rec.stage, &rec.config_hash[..12.min(rec.config_hash.len())]));
            } else if file_sha256(&path)? != rec.sha256 {
                problems.push(format!("{name} was modified after {} wrote it", rec.stage));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(CliError::MixedArtifacts(format!(
                "expected config hash {}; {}",
                &config_hash[..12],
                problems.join("; ")
            )))
        }
    }
}

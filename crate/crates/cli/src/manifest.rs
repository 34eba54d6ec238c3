//! Run directories: every emitted file is hashed into a manifest.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Ok,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub name: String,
    pub status: StageStatus,
    pub detail: Option<String>,
}

/// Self-description of one run. Timestamps live only here; result files
/// never carry them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: ExperimentConfig,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub stages: Vec<Stage>,
    pub files: Vec<FileEntry>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

/// Writes result files under one directory and records them.
pub struct RunDir {
    dir: PathBuf,
    command: String,
    config: ExperimentConfig,
    started: u64,
    stages: Vec<Stage>,
    files: Vec<FileEntry>,
}

impl RunDir {
    pub fn create(dir: &Path, command: &str, config: &ExperimentConfig) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir)?;
        let mut run = RunDir {
            dir: dir.to_path_buf(),
            command: command.to_string(),
            config: config.clone(),
            started: now(),
            stages: Vec::new(),
            files: Vec::new(),
        };
        run.write_json("config.json", config)?;
        Ok(run)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        std::fs::write(self.dir.join(name), bytes)?;
        self.files.retain(|f| f.path != name);
        self.files.push(FileEntry {
            path: name.to_string(),
            bytes: bytes.len() as u64,
            sha256: sha256_hex(bytes),
        });
        log::debug!("wrote {name} ({} bytes)", bytes.len());
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    pub fn stage(&mut self, name: &str, result: Result<(), &CliError>) {
        self.stages.push(Stage {
            name: name.to_string(),
            status: if result.is_ok() { StageStatus::Ok } else { StageStatus::Failed },
            detail: result.err().map(|e| e.to_string()),
        });
    }

    /// Writes the manifest; also called after a failed stage so partial
    /// runs stay self-describing.
    pub fn finish(self) -> Result<RunManifest, CliError> {
        let manifest = RunManifest {
            tool: "bulkedge".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: self.command,
            config: self.config,
            started_unix: self.started,
            finished_unix: now(),
            stages: self.stages,
            files: self.files,
        };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        std::fs::write(self.dir.join(MANIFEST_FILE), text)?;
        Ok(manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }

    #[test]
    fn inventory_matches_disk() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig::from_json(r#"{"family": "identity", "n": 8}"#).unwrap();
        let mut run = RunDir::create(tmp.path(), "bands", &cfg).unwrap();
        run.write("a.csv", b"x\n1\n").unwrap();
        run.write("a.csv", b"x\n2\n").unwrap();
        run.stage("bands", Ok(()));
        let m = run.finish().unwrap();
        assert_eq!(m.files.len(), 2);
        for f in &m.files {
            let bytes = std::fs::read(tmp.path().join(&f.path)).unwrap();
            assert_eq!(sha256_hex(&bytes), f.sha256);
        }
        let back: RunManifest = serde_json::from_slice(&std::fs::read(tmp.path().join(MANIFEST_FILE)).unwrap()).unwrap();
        assert_eq!(back.config, cfg);
    }
}

//! Run manifests: config echo, code version, timestamps, and a checksummed
//! inventory of every output file a run produced.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Result;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub code_version: String,
    pub started_at: String,
    pub finished_at: String,
    /// Output inventory; checksums cover file contents only, so reruns with
    /// identical configs produce identical checksums even though the
    /// timestamps above differ.
    pub outputs: Vec<FileEntry>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    let digest = h.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

fn now_rfc3339() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

/// Collects output files as a run writes them, then seals the manifest.
pub struct ManifestBuilder {
    command: String,
    config: serde_json::Value,
    started_at: String,
    outputs: Vec<FileEntry>,
    out_dir: PathBuf,
}

impl ManifestBuilder {
    pub fn new(command: &str, config: serde_json::Value, out_dir: &Path) -> Self {
        ManifestBuilder {
            command: command.to_string(),
            config,
            started_at: now_rfc3339(),
            outputs: Vec::new(),
            out_dir: out_dir.to_path_buf(),
        }
    }

    pub fn out_dir(&self) -> &Path {
        &self.out_dir
    }

    /// Write a file under the run directory and record it in the inventory.
    pub fn write_file(&mut self, name: &str, contents: &[u8]) -> Result<PathBuf> {
        std::fs::create_dir_all(&self.out_dir)?;
        let path = self.out_dir.join(name);
        std::fs::write(&path, contents)?;
        self.outputs.push(FileEntry {
            path: name.to_string(),
            bytes: contents.len() as u64,
            sha256: sha256_hex(contents),
        });
        Ok(path)
    }

    /// Seal and write `manifest.json`; verifies every listed file still
    /// matches its checksum.
    pub fn finish(self) -> Result<RunManifest> {
        let manifest = RunManifest {
            command: self.command,
            config: self.config,
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            started_at: self.started_at,
            finished_at: now_rfc3339(),
            outputs: self.outputs,
        };
        for entry in &manifest.outputs {
            let bytes = std::fs::read(self.out_dir.join(&entry.path))?;
            debug_assert_eq!(sha256_hex(&bytes), entry.sha256);
        }
        let json = serde_json::to_vec_pretty(&manifest)?;
        std::fs::write(self.out_dir.join("manifest.json"), json)?;
        Ok(manifest)
    }
}

impl RunManifest {
    /// Check that every listed output exists and matches its checksum.
    pub fn verify(&self, out_dir: &Path) -> Result<bool> {
        for entry in &self.outputs {
            let path = out_dir.join(&entry.path);
            if !path.exists() {
                return Ok(false);
            }
            let bytes = std::fs::read(path)?;
            if sha256_hex(&bytes) != entry.sha256 {
                return Ok(false);
            }
        }
        Ok(true)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_round_trip_and_verify() {
        let dir = tempfile::tempdir().unwrap();
        let mut b = ManifestBuilder::new("simulate", serde_json::json!({"n": 2}), dir.path());
        b.write_file("data.csv", b"a,b\n1,2\n").unwrap();
        let manifest = b.finish().unwrap();
        assert_eq!(manifest.outputs.len(), 1);
        assert!(manifest.verify(dir.path()).unwrap());
        // tamper: verification fails
        std::fs::write(dir.path().join("data.csv"), b"x").unwrap();
        assert!(!manifest.verify(dir.path()).unwrap());
    }

    #[test]
    fn identical_contents_identical_checksums() {
        let a = sha256_hex(b"payload");
        let b = sha256_hex(b"payload");
        assert_eq!(a, b);
        assert_eq!(a.len(), 64);
    }
}

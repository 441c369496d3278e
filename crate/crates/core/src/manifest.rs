//! Run manifests: every subcommand records the config hash, the hashes of
//! the files it read and wrote, its seed and its wall-clock time in
//! `<stage>.manifest.json` next to its outputs.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileHash {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: String,
    pub version: String,
    pub config_sha256: String,
    pub seed: Option<u64>,
    pub inputs: Vec<FileHash>,
    pub outputs: Vec<FileHash>,
    pub started_unix_s: f64,
    pub wall_clock_s: f64,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn hash_file(path: &Path) -> std::io::Result<FileHash> {
    let bytes = std::fs::read(path)?;
    Ok(FileHash { path: path.to_path_buf(), sha256: sha256_hex(&bytes) })
}

fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

/// Collects a manifest for one stage; create it before the work starts.
pub struct ManifestBuilder {
    stage: String,
    config_sha256: String,
    seed: Option<u64>,
    inputs: Vec<FileHash>,
    started: f64,
    clock: std::time::Instant,
}

impl ManifestBuilder {
    pub fn new(stage: &str, config_text: &str, seed: Option<u64>) -> Self {
        Self {
            stage: stage.to_string(),
            config_sha256: sha256_hex(config_text.as_bytes()),
            seed,
            inputs: Vec::new(),
            started: unix_now(),
            clock: std::time::Instant::now(),
        }
    }

    pub fn input(&mut self, path: &Path) -> std::io::Result<()> {
        self.inputs.push(hash_file(path)?);
        Ok(())
    }

    /// Hashes `outputs` and writes the manifest into `dir`.
    pub fn finish(self, dir: &Path, outputs: &[PathBuf]) -> std::io::Result<PathBuf> {
        let outputs = outputs.iter().map(|p| hash_file(p)).collect::<std::io::Result<Vec<_>>>()?;
        let m = Manifest {
            stage: self.stage,
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_sha256: self.config_sha256,
            seed: self.seed,
            inputs: self.inputs,
            outputs,
            started_unix_s: self.started,
            wall_clock_s: self.clock.elapsed().as_secs_f64(),
        };
        let path = dir.join(format!("{}.manifest.json", m.stage));
        std::fs::write(&path, serde_json::to_string_pretty(&m).expect("manifest serializes"))?;
        Ok(path)
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
    fn writes_hashes() {
        let dir = tempfile::tempdir().unwrap();
        let inp = dir.path().join("in.bin");
        let out = dir.path().join("out.bin");
        std::fs::write(&inp, b"abc").unwrap();
        std::fs::write(&out, b"").unwrap();
        let mut b = ManifestBuilder::new("stage", "x = 1", Some(4));
        b.input(&inp).unwrap();
        let p = b.finish(dir.path(), &[out]).unwrap();
        let m: Manifest = serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap();
        assert_eq!(m.inputs[0].sha256, sha256_hex(b"abc"));
        assert_eq!(m.outputs[0].sha256, sha256_hex(b""));
        assert_eq!(m.seed, Some(4));
    }
}

//! Run manifests: merged configuration, seeds, input digests, outputs and
//! stage timings. The hash covers everything except outputs and timings, so
//! identical inputs and settings give an identical hash.

use std::io::Read;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<PathBuf>,
    pub stages: Vec<StageTiming>,
}

#[derive(Serialize)]
struct Hashed<'a> {
    tool_version: &'a str,
    command: &'a str,
    seed: u64,
    config: &'a serde_json::Value,
    inputs: Vec<&'a str>,
}

/// Hex SHA-256 of a file, or of every file under a directory in sorted
/// relative-path order.
pub fn sha256_path(path: &Path) -> Result<String> {
    let mut h = Sha256::new();
    if path.is_dir() {
        let mut files = Vec::new();
        collect_files(path, path, &mut files)?;
        files.sort();
        for rel in files {
            h.update(rel.to_string_lossy().as_bytes());
            h.update([0u8]);
            hash_file(&path.join(&rel), &mut h)?;
        }
    } else {
        hash_file(path, &mut h)?;
    }
    Ok(hex::encode(h.finalize()))
}

fn hash_file(path: &Path, h: &mut Sha256) -> Result<()> {
    let mut f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut buf = [0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            return Ok(());
        }
        h.update(&buf[..n]);
    }
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let p = entry.map_err(|e| Error::io(dir, e))?.path();
        if p.is_dir() {
            collect_files(root, &p, out)?;
        } else {
            out.push(p.strip_prefix(root).expect("under root").to_path_buf());
        }
    }
    Ok(())
}

impl RunManifest {
    pub fn new(command: &str, seed: u64, config: &impl Serialize) -> Result<Self> {
        Ok(RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            seed,
            config: serde_json::to_value(config)?,
            inputs: Vec::new(),
            outputs: Vec::new(),
            stages: Vec::new(),
        })
    }

    /// Records an input by content; the path itself does not enter the hash.
    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        let sha256 = sha256_path(path)?;
        self.inputs.push(FileDigest {
            path: path.to_path_buf(),
            sha256,
        });
        Ok(())
    }

    pub fn add_output(&mut self, path: &Path) {
        self.outputs.push(path.to_path_buf());
    }

    pub fn hash(&self) -> String {
        let hashed = Hashed {
            tool_version: &self.tool_version,
            command: &self.command,
            seed: self.seed,
            config: &self.config,
            inputs: self.inputs.iter().map(|d| d.sha256.as_str()).collect(),
        };
        let bytes = serde_json::to_vec(&hashed).expect("manifest serializes");
        hex::encode(Sha256::digest(bytes))
    }

    pub fn time<T>(&mut self, stage: &str, f: impl FnOnce(&mut Self) -> T) -> T {
        let start = Instant::now();
        let out = f(self);
        self.stages.push(StageTiming {
            stage: stage.to_string(),
            seconds: start.elapsed().as_secs_f64(),
        });
        out
    }

    /// Writes `manifest.json` (with the hash) into `dir`.
    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        let mut v = serde_json::to_value(self)?;
        v["hash"] = self.hash().into();
        let path = dir.join("manifest.json");
        std::fs::write(&path, serde_json::to_string_pretty(&v)? + "\n").map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_ignores_timing_and_paths() {
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a.bin"), dir.path().join("b.bin"));
        std::fs::write(&a, b"same").unwrap();
        std::fs::write(&b, b"same").unwrap();
        let mut m1 = RunManifest::new("predict", 3, &serde_json::json!({"tile": 64})).unwrap();
        m1.add_input(&a).unwrap();
        let mut m2 = m1.clone();
        m2.inputs[0].path = b.clone();
        m2.time("x", |_| ());
        m2.add_output(&b);
        assert_eq!(m1.hash(), m2.hash());
        std::fs::write(&b, b"diff").unwrap();
        let mut m3 = RunManifest::new("predict", 3, &serde_json::json!({"tile": 64})).unwrap();
        m3.add_input(&b).unwrap();
        assert_ne!(m1.hash(), m3.hash());
        let m4 = RunManifest::new("predict", 4, &serde_json::json!({"tile": 64})).unwrap();
        assert_ne!(
            RunManifest::new("predict", 3, &serde_json::json!({})).unwrap().hash(),
            m4.hash()
        );
    }

    #[test]
    fn directory_digest_is_order_free() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir(dir.path().join("sub")).unwrap();
        std::fs::write(dir.path().join("sub/x"), b"1").unwrap();
        std::fs::write(dir.path().join("y"), b"2").unwrap();
        let h = sha256_path(dir.path()).unwrap();
        assert_eq!(h.len(), 64);
        assert_eq!(h, sha256_path(dir.path()).unwrap());
        std::fs::write(dir.path().join("y"), b"3").unwrap();
        assert_ne!(h, sha256_path(dir.path()).unwrap());
        // known digest of "abc"
        let f = dir.path().join("abc");
        std::fs::write(&f, b"abc").unwrap();
        assert_eq!(
            sha256_path(&f).unwrap(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}

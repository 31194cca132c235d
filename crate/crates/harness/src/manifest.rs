//! Run manifests: resolved configuration, seeds, wall time and hashed outputs.

use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::error::Result;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputFile {
    /// Path relative to the output directory.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

impl OutputFile {
    pub fn hash(dir: &Path, name: &str) -> Result<Self> {
        let (sha256, bytes) = sha256_file(&dir.join(name))?;
        Ok(Self { path: name.to_string(), sha256, bytes })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub experiment: String,
    /// Everything needed to rerun; `clusterlab experiment manifest.json` does so.
    pub config: ExperimentConfig,
    pub seeds: Vec<u64>,
    pub wall_time_seconds: f64,
    pub outputs: Vec<OutputFile>,
    /// Headline numbers of the run, keyed by pipeline.
    pub summary: serde_json::Map<String, serde_json::Value>,
    pub notes: Vec<String>,
}

impl Manifest {
    pub fn write(&self, dir: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(dir.join(MANIFEST_FILE), text + "\n")?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
    }

    /// Names of outputs whose current content no longer matches the recorded hash.
    pub fn verify(&self, dir: &Path) -> Result<Vec<String>> {
        let mut stale = Vec::new();
        for o in &self.outputs {
            let path = dir.join(&o.path);
            if !path.exists() || sha256_file(&path)?.0 != o.sha256 {
                stale.push(o.path.clone());
            }
        }
        Ok(stale)
    }
}

/// Hex SHA-256 of a file and its length.
pub fn sha256_file(path: &Path) -> Result<(String, u64)> {
    let mut file = File::open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    let mut total = 0u64;
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
        total += n as u64;
    }
    Ok((hex::encode(hasher.finalize()), total))
}

pub fn sha256_str(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

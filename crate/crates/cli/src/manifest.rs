use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

#[derive(Debug, Serialize)]
pub struct FileHash {
    pub path: PathBuf,
    pub sha256: String,
}

/// Everything needed to repeat a run: the resolved configuration, the tool
/// version, and hashes of every input and output file.
#[derive(Debug, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub config: RunConfig,
    pub inputs: Vec<FileHash>,
    pub outputs: Vec<FileHash>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn hash_file(path: &Path) -> Result<FileHash> {
    let bytes = std::fs::read(path).with_context(|| format!("hashing {}", path.display()))?;
    Ok(FileHash { path: path.to_path_buf(), sha256: sha256_hex(&bytes) })
}

impl Manifest {
    pub fn new(config: RunConfig) -> Self {
        Manifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            config,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(hash_file(path)?);
        Ok(())
    }

    pub fn write(mut self, out_dir: &Path, outputs: &[PathBuf]) -> Result<PathBuf> {
        for p in outputs {
            self.outputs.push(hash_file(p)?);
        }
        let path = out_dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&self)?;
        std::fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}

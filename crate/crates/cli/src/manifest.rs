//! Run manifest: what a command read, how it was configured, what it wrote.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::require;

#[derive(Debug, Serialize)]
pub struct InputDigest {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub inputs: Vec<InputDigest>,
    pub outputs: Vec<PathBuf>,
}

impl RunManifest {
    /// Hashes every input. A missing input fails here, before any work.
    pub fn new(command: &str, seed: u64, config: &impl Serialize, inputs: &[&Path]) -> anyhow::Result<Self> {
        let inputs = inputs
            .iter()
            .map(|p| {
                require(p)?;
                let bytes = fs::read(p).with_context(|| format!("reading {}", p.display()))?;
                Ok(InputDigest { path: p.to_path_buf(), sha256: hex::encode(Sha256::digest(&bytes)) })
            })
            .collect::<anyhow::Result<_>>()?;
        Ok(Self {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed,
            config: serde_json::to_value(config)?,
            inputs,
            outputs: Vec::new(),
        })
    }

    pub fn output(mut self, path: impl Into<PathBuf>) -> Self {
        self.outputs.push(path.into());
        self
    }

    pub fn write(&self, path: &Path) -> anyhow::Result<()> {
        acrodis_core::data::write_json(path, self)?;
        Ok(())
    }
}

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

/// Written as `manifest.json` into every output directory. It holds
/// everything that determines the outputs and nothing else: no timestamps,
/// thread count, or output location.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub subcommand: &'static str,
    pub master_seed: Option<u64>,
    pub parameters: serde_json::Value,
    pub inputs: Vec<InputDigest>,
}

impl RunManifest {
    pub fn new<P: Serialize>(
        subcommand: &'static str,
        params: &P,
        master_seed: Option<u64>,
    ) -> Result<Self> {
        Ok(Self {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            subcommand,
            master_seed,
            parameters: serde_json::to_value(params)?,
            inputs: Vec::new(),
        })
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        self.inputs.push(InputDigest {
            path: path.display().to_string(),
            sha256: hex::encode(Sha256::digest(&bytes)),
        });
        Ok(())
    }

    /// Digest a weight manifest together with the blob it points to.
    pub fn add_weights(&mut self, manifest: &Path) -> Result<()> {
        self.add_input(manifest)?;
        let header: serde_json::Value = serde_json::from_slice(&fs::read(manifest)?)
            .with_context(|| format!("parsing {}", manifest.display()))?;
        if let Some(blob) = header.get("blob").and_then(|b| b.as_str()) {
            let dir = manifest.parent().map(Path::to_path_buf).unwrap_or_default();
            self.add_input(&dir.join(blob))?;
        }
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join("manifest.json");
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}

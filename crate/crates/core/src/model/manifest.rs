//! Weight manifest: a JSON header describing every tensor plus the model
//! config, referencing a raw little-endian `f32` blob.
//!
//! ```json
//! { "n_layers": 2, ..., "blob": "weights.bin",
//!   "tensors": [ { "name": "embed.tok", "shape": [V, D], "dtype": "f32",
//!                  "byte_offset": 0, "byte_length": 4*V*D }, ... ] }
//! ```
//!
//! `blob` is resolved relative to the manifest's directory.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::weights::{tensor_layout, WeightSet};
use super::Model;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    pub byte_offset: u64,
    pub byte_length: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightManifest {
    #[serde(flatten)]
    pub config: ModelConfig,
    pub blob: String,
    pub tensors: Vec<TensorRecord>,
}

/// Load a model from a manifest file and its blob.
pub fn load_model(manifest_path: impl AsRef<Path>) -> Result<Model> {
    let manifest_path = manifest_path.as_ref();
    let manifest: WeightManifest = serde_json::from_slice(&fs::read(manifest_path)?)?;
    let config = manifest.config.clone();
    config.validate()?;
    let blob_path = manifest_path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(&manifest.blob);
    let blob = fs::read(&blob_path)?;

    let expected: BTreeMap<String, Vec<usize>> = tensor_layout(&config).into_iter().collect();
    let mut tensors = BTreeMap::new();
    for rec in &manifest.tensors {
        if rec.dtype != "f32" {
            return Err(Error::Manifest(format!(
                "tensor {} has dtype {}, only f32 is supported",
                rec.name, rec.dtype
            )));
        }
        let Some(shape) = expected.get(&rec.name) else {
            return Err(Error::Manifest(format!("unexpected tensor {}", rec.name)));
        };
        if &rec.shape != shape {
            return Err(Error::Manifest(format!(
                "tensor {} has shape {:?}, expected {shape:?}",
                rec.name, rec.shape
            )));
        }
        let numel: u64 = shape.iter().map(|&d| d as u64).product();
        if rec.byte_length != numel * 4 {
            return Err(Error::Manifest(format!(
                "tensor {} declares {} bytes, shape needs {}",
                rec.name,
                rec.byte_length,
                numel * 4
            )));
        }
        let start = rec.byte_offset as usize;
        let end = start
            .checked_add(rec.byte_length as usize)
            .filter(|&e| e <= blob.len())
            .ok_or_else(|| {
                Error::Manifest(format!(
                    "tensor {} extends past the end of the blob",
                    rec.name
                ))
            })?;
        let data = blob[start..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        if tensors.insert(rec.name.clone(), data).is_some() {
            return Err(Error::Manifest(format!("duplicate tensor {}", rec.name)));
        }
    }
    let weights = WeightSet::from_named(&config, tensors)?;
    Model::new(config, weights)
}

/// Write `model` as `<dir>/<stem>.json` plus `<dir>/<stem>.bin`; returns the manifest path.
pub fn save_model(model: &Model, dir: impl AsRef<Path>, stem: &str) -> Result<std::path::PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let blob_name = format!("{stem}.bin");
    let mut blob = Vec::new();
    let mut records = Vec::new();
    let layout = tensor_layout(model.config());
    for ((name, data), (_, shape)) in model
        .weights()
        .named_tensors(model.config())
        .into_iter()
        .zip(layout)
    {
        let byte_offset = blob.len() as u64;
        for v in data {
            blob.extend_from_slice(&v.to_le_bytes());
        }
        records.push(TensorRecord {
            name,
            shape,
            dtype: "f32".into(),
            byte_offset,
            byte_length: (data.len() * 4) as u64,
        });
    }
    let manifest = WeightManifest {
        config: model.config().clone(),
        blob: blob_name.clone(),
        tensors: records,
    };
    fs::write(dir.join(&blob_name), &blob)?;
    let path = dir.join(format!("{stem}.json"));
    let mut f = fs::File::create(&path)?;
    serde_json::to_writer_pretty(&mut f, &manifest)?;
    f.write_all(b"\n")?;
    Ok(path)
}

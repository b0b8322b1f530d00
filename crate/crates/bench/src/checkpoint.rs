//! Model checkpoints: a JSON manifest plus a flat little-endian f64 blob.
//!
//! The blob holds every parameter and then every buffer, in the order the
//! manifest lists them.

use std::fs;
use std::path::Path;

use adfl_core::label::Fusion;
use adfl_core::model::{Model, ModelConfig};
use serde::{Deserialize, Serialize};

use crate::error::{BenchError, Result};

pub const MANIFEST_FILE: &str = "model.json";
pub const BLOB_FILE: &str = "model.bin";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelRepr {
    pub stage_widths: [usize; 4],
    pub input_hw: (usize, usize),
    /// Variant label carrying position, attention variant and skip settings.
    pub label: String,
    pub af_dim: usize,
    pub fusion: String,
    pub embed_dim: usize,
    pub num_identities: usize,
}

impl ModelRepr {
    pub fn from_config(c: &ModelConfig) -> Self {
        Self {
            stage_widths: c.stage_widths,
            input_hw: c.input_hw,
            label: c.label().to_string(),
            af_dim: c.af_dim,
            fusion: c.fusion.to_string(),
            embed_dim: c.embed_dim,
            num_identities: c.num_identities,
        }
    }

    pub fn to_config(&self) -> Result<ModelConfig> {
        let base = ModelConfig {
            stage_widths: self.stage_widths,
            input_hw: self.input_hw,
            af_dim: self.af_dim,
            fusion: self.fusion.parse::<Fusion>()?,
            embed_dim: self.embed_dim,
            num_identities: self.num_identities,
            ..ModelConfig::default()
        };
        let cfg = base.with_label(&self.label.parse()?);
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub model: ModelRepr,
    pub seed: u64,
    /// Experiment configuration text the model was trained with, if any.
    pub config: Option<String>,
    pub params: Vec<TensorEntry>,
    pub buffers: Vec<TensorEntry>,
}

pub fn save(dir: &Path, model: &Model, config: Option<&str>) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| BenchError::io(dir, e))?;
    let entry = |name: &str, shape: &[usize]| TensorEntry { name: name.into(), shape: shape.to_vec() };
    let manifest = CheckpointManifest {
        model: ModelRepr::from_config(model.config()),
        seed: model.seed,
        config: config.map(str::to_string),
        params: model.store.params().iter().map(|p| entry(&p.name, p.tensor.shape())).collect(),
        buffers: model.store.buffers().iter().map(|b| entry(&b.name, b.tensor.shape())).collect(),
    };
    let path = dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| BenchError::format(&path, e))?;
    fs::write(&path, json).map_err(|e| BenchError::io(&path, e))?;
    let blob: Vec<u8> = model.store.flatten().iter().flat_map(|v| v.to_le_bytes()).collect();
    let path = dir.join(BLOB_FILE);
    fs::write(&path, blob).map_err(|e| BenchError::io(&path, e))
}

pub fn load(dir: &Path) -> Result<(Model, CheckpointManifest)> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| BenchError::io(&path, e))?;
    let manifest: CheckpointManifest = serde_json::from_str(&text).map_err(|e| BenchError::format(&path, e))?;
    let mut model = Model::build(&manifest.model.to_config()?, manifest.seed)?;
    let names = |m: &Model| -> Vec<TensorEntry> {
        m.store
            .params()
            .iter()
            .map(|p| TensorEntry { name: p.name.clone(), shape: p.tensor.shape().to_vec() })
            .collect()
    };
    if names(&model) != manifest.params {
        return Err(BenchError::format(&path, "parameter list does not match the model configuration"));
    }
    let path = dir.join(BLOB_FILE);
    let bytes = fs::read(&path).map_err(|e| BenchError::io(&path, e))?;
    if bytes.len() % 8 != 0 {
        return Err(BenchError::format(&path, "blob length is not a multiple of 8"));
    }
    let values: Vec<f64> = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    model.store.load_flat(&values).map_err(|e| BenchError::format(&path, e))?;
    Ok((model, manifest))
}

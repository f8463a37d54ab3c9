//! `NPB1` checkpoints: magic, length-prefixed JSON manifest, raw tensors.
//!
//! Layout: the 4 bytes `NPB1`, a little-endian `u64` manifest length, the
//! UTF-8 JSON manifest, then every tensor as little-endian `f64` values.
//! Manifest offsets are byte offsets into the data section.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use lbanp_tensor::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{NpError, Result};
use crate::models::{ModelConfig, NeuralProcess};
use crate::params::ParamStore;

pub const MAGIC: &[u8; 4] = b"NPB1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: ModelConfig,
    /// Free-form run metadata (task name and the like).
    #[serde(default)]
    pub meta: BTreeMap<String, String>,
    pub tensors: Vec<TensorEntry>,
}

pub fn encode(model: &NeuralProcess, meta: &BTreeMap<String, String>) -> Result<Vec<u8>> {
    let mut offset = 0u64;
    let mut tensors = Vec::with_capacity(model.params().len());
    for (name, t) in model.params().iter() {
        tensors.push(TensorEntry {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            offset,
        });
        offset += t.size_bytes() as u64;
    }
    let manifest = Manifest {
        config: model.config().clone(),
        meta: meta.clone(),
        tensors,
    };
    let json = serde_json::to_vec(&manifest).map_err(|e| NpError::Contract(format!("manifest encoding: {e}")))?;
    let mut out = Vec::with_capacity(12 + json.len() + offset as usize);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for t in model.params().tensors() {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<(NeuralProcess, BTreeMap<String, String>)> {
    let bad = |detail: String| NpError::Format {
        path: path.to_path_buf(),
        detail,
    };
    if bytes.len() < 12 || &bytes[..4] != MAGIC {
        return Err(bad("missing NPB1 magic".into()));
    }
    let len = u64::from_le_bytes(bytes[4..12].try_into().expect("8 bytes")) as usize;
    let data_start = 12usize
        .checked_add(len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| bad(format!("manifest length {len} exceeds file size")))?;
    let manifest: Manifest =
        serde_json::from_slice(&bytes[12..data_start]).map_err(|e| bad(format!("manifest: {e}")))?;
    let data = &bytes[data_start..];
    let mut store = ParamStore::new();
    for entry in &manifest.tensors {
        let numel: usize = entry.shape.iter().product();
        let start = entry.offset as usize;
        let end = start + numel * 8;
        if end > data.len() {
            return Err(bad(format!("tensor {} runs past the end of the file", entry.name)));
        }
        let values = data[start..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let t = Tensor::new(entry.shape.clone(), values).map_err(|e| bad(format!("tensor {}: {e}", entry.name)))?;
        store.add(entry.name.clone(), t);
    }
    let model = NeuralProcess::with_params(manifest.config, store)?;
    Ok((model, manifest.meta))
}

pub fn save_checkpoint(path: impl AsRef<Path>, model: &NeuralProcess, meta: &BTreeMap<String, String>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(model, meta)?).map_err(|e| NpError::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(NeuralProcess, BTreeMap<String, String>)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| NpError::io(path, e))?;
    decode(&bytes, path)
}

//! Single-file checkpoints: a fixed header, a TOML manifest describing the
//! configuration and where each tensor lives, then the tensors themselves.
//!
//! ```text
//! b"DCLPCKPT" | version: u32 LE | manifest length: u32 LE | manifest (UTF-8 TOML) | tensor blocks
//! ```
//!
//! Offsets in the manifest are relative to the first tensor block; each block
//! is a tensor in the autodiff binary format.

use std::fs;
use std::path::Path;

use declip_autodiff::{ParamStore, Tensor};
use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::error::{ModelError, Result};
use crate::model::DeclipModel;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"DCLPCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    offset: u64,
    bytes: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    model: ModelConfig,
    tensor: Vec<TensorEntry>,
}

fn corrupt(msg: impl Into<String>) -> ModelError {
    ModelError::Checkpoint(msg.into())
}

pub fn encode_checkpoint(model: &DeclipModel) -> Result<Vec<u8>> {
    let mut blocks = Vec::new();
    let mut entries = Vec::with_capacity(model.params.len());
    for (name, tensor) in model.params.iter() {
        let bytes = tensor.to_bytes();
        entries.push(TensorEntry {
            name: name.to_string(),
            offset: blocks.len() as u64,
            bytes: bytes.len() as u64,
        });
        blocks.extend(bytes);
    }
    let manifest = Manifest {
        format_version: CHECKPOINT_VERSION,
        model: model.config,
        tensor: entries,
    };
    let text = toml::to_string(&manifest).map_err(|e| corrupt(format!("manifest encoding: {e}")))?;
    let mut out = Vec::with_capacity(16 + text.len() + blocks.len());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(text.len() as u32).to_le_bytes());
    out.extend_from_slice(text.as_bytes());
    out.extend(blocks);
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<DeclipModel> {
    if bytes.len() < 16 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(corrupt("not a checkpoint (bad magic)"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(corrupt(format!("unsupported checkpoint version {version}")));
    }
    let len = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
    let body = bytes
        .get(16..16 + len)
        .ok_or_else(|| corrupt("truncated manifest"))?;
    let text = std::str::from_utf8(body).map_err(|_| corrupt("manifest is not UTF-8"))?;
    let manifest: Manifest = toml::from_str(text).map_err(|e| corrupt(format!("manifest: {e}")))?;
    if manifest.format_version != version {
        return Err(corrupt("manifest and header versions differ"));
    }
    let data = &bytes[16 + len..];
    let mut params = ParamStore::new();
    for entry in manifest.tensor {
        let start = entry.offset as usize;
        let block = start
            .checked_add(entry.bytes as usize)
            .and_then(|end| data.get(start..end))
            .ok_or_else(|| corrupt(format!("tensor {} lies outside the file", entry.name)))?;
        let tensor = Tensor::from_bytes(block)?;
        params.insert(entry.name, tensor)?;
    }
    DeclipModel::from_parts(manifest.model, params)
}

pub fn save_checkpoint(model: &DeclipModel, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_checkpoint(model)?)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<DeclipModel> {
    decode_checkpoint(&fs::read(path)?)
}

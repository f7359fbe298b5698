//! Model checkpoints: versioned JSON with the shape spec, the training seed,
//! a config hash, and parameters encoded as little-endian 64-bit floats.

use crate::error::{Error, Result};
use crate::rf_core::mlp::{MlpConfig, MlpVelocityModel};
use crate::util::fnv1a;
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format_version: u32,
    kind: String,
    config: MlpConfig,
    config_hash: String,
    /// Parameters as base64 of their little-endian f64 bytes.
    params_le64: String,
}

fn config_hash(config: &MlpConfig) -> Result<String> {
    let canonical = serde_json::to_string(config)?;
    Ok(format!("{:016x}", fnv1a(canonical.as_bytes())))
}

pub fn save_checkpoint(model: &MlpVelocityModel, path: impl AsRef<Path>) -> Result<()> {
    let mut bytes = Vec::with_capacity(model.params().len() * 8);
    for p in model.params() {
        bytes.extend_from_slice(&p.to_le_bytes());
    }
    let file = CheckpointFile {
        format_version: CHECKPOINT_VERSION,
        kind: "mlp".into(),
        config: model.config().clone(),
        config_hash: config_hash(model.config())?,
        params_le64: B64.encode(&bytes),
    };
    let json = serde_json::to_string_pretty(&file)?;
    std::fs::write(path.as_ref(), json)
        .map_err(|e| Error::io(path.as_ref().display().to_string(), e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<MlpVelocityModel> {
    let text = std::fs::read_to_string(path.as_ref())
        .map_err(|e| Error::io(path.as_ref().display().to_string(), e))?;
    let file: CheckpointFile = serde_json::from_str(&text)?;
    if file.format_version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {}",
            file.format_version
        )));
    }
    if file.kind != "mlp" {
        return Err(Error::Checkpoint(format!("unknown model kind {:?}", file.kind)));
    }
    if file.config_hash != config_hash(&file.config)? {
        return Err(Error::Checkpoint("config hash mismatch".into()));
    }
    let bytes = B64
        .decode(file.params_le64.as_bytes())
        .map_err(|e| Error::Checkpoint(format!("bad parameter encoding: {e}")))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Checkpoint("parameter bytes not a multiple of 8".into()));
    }
    let params: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    MlpVelocityModel::from_params(file.config, params)
}

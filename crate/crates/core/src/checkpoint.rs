//! Checkpoint directories: `params.bin` plus a `checkpoint.json` sidecar.

use std::fs;
use std::path::Path;

use dfseg_nn::{ParamStore, Scalar};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const PARAMS_FILE: &str = "params.bin";
pub const SIDECAR_FILE: &str = "checkpoint.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    /// `"unet"` or `"cyclegan"`.
    pub kind: String,
    pub dtype: String,
    pub seed: u64,
    pub trained_epochs: usize,
    /// SHA-256 of `params.bin`.
    pub content_hash: String,
    pub config: serde_json::Value,
    #[serde(default)]
    pub history: serde_json::Value,
}

pub fn save_checkpoint<T: Scalar>(dir: &Path, mut sidecar: Sidecar, params: &ParamStore<T>) -> Result<Sidecar> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let bytes = params.to_bytes();
    sidecar.content_hash = hex::encode(Sha256::digest(&bytes));
    sidecar.dtype = T::DTYPE.name().to_string();
    let p = dir.join(PARAMS_FILE);
    fs::write(&p, &bytes).map_err(|e| Error::io(&p, e))?;
    let s = dir.join(SIDECAR_FILE);
    let json = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes");
    fs::write(&s, json).map_err(|e| Error::io(&s, e))?;
    Ok(sidecar)
}

/// Loads and verifies a checkpoint. `kind` must match the sidecar.
pub fn load_checkpoint<T: Scalar>(dir: &Path, kind: &str) -> Result<(Sidecar, ParamStore<T>)> {
    let s = dir.join(SIDECAR_FILE);
    let text = fs::read_to_string(&s).map_err(|e| Error::Load {
        path: s.clone(),
        reason: e.to_string(),
    })?;
    let sidecar: Sidecar = serde_json::from_str(&text).map_err(|e| Error::Load {
        path: s.clone(),
        reason: e.to_string(),
    })?;
    if sidecar.kind != kind {
        return Err(Error::Checkpoint(format!(
            "{} holds a `{}` checkpoint, expected `{kind}`",
            dir.display(),
            sidecar.kind
        )));
    }
    let p = dir.join(PARAMS_FILE);
    let bytes = fs::read(&p).map_err(|e| Error::Load {
        path: p.clone(),
        reason: e.to_string(),
    })?;
    let hash = hex::encode(Sha256::digest(&bytes));
    if hash != sidecar.content_hash {
        return Err(Error::Checkpoint(format!("{}: content hash mismatch", p.display())));
    }
    let params = ParamStore::from_bytes(&bytes).map_err(|reason| Error::Load { path: p, reason })?;
    Ok((sidecar, params))
}

/// Parameters from either a checkpoint directory or a bare parameter file.
pub fn load_params<T: Scalar>(path: &Path) -> Result<ParamStore<T>> {
    let file = if path.is_dir() {
        path.join(PARAMS_FILE)
    } else {
        path.to_path_buf()
    };
    Ok(ParamStore::load(&file)?)
}

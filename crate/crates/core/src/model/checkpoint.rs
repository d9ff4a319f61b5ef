//! Self-describing checkpoint files: magic, JSON header, little-endian `f64` payload.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::params::{Layout, ModelParams, ParamSpec};
use super::Hyperparams;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"AMRSEQ\x00\x01";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("not a checkpoint (bad magic bytes)")]
    BadMagic,
    #[error("checkpoint is truncated")]
    Truncated,
    #[error("bad checkpoint header: {0}")]
    Header(#[from] serde_json::Error),
    #[error("parameter layout does not match the hyperparameters at `{0}`")]
    LayoutMismatch(String),
    #[error(transparent)]
    Model(#[from] super::ModelError),
}

#[derive(Serialize, Deserialize)]
struct Header {
    hyperparams: Hyperparams,
    vocab_size: usize,
    vocab_hash: String,
    step: u64,
    tags: Vec<String>,
    params: Vec<ParamSpec>,
}

/// Model weights plus what is needed to use them.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    /// Fingerprint of the subword vocabulary the model was trained with.
    pub vocab_hash: String,
    pub step: u64,
    /// Task tags the model has been trained on.
    pub tags: Vec<String>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            hyperparams: self.params.hp.clone(),
            vocab_size: self.params.vocab_size,
            vocab_hash: self.vocab_hash.clone(),
            step: self.step,
            tags: self.tags.clone(),
            params: self.params.layout.specs.clone(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(16 + json.len() + 8 * self.params.data.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for x in &self.params.data {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        if bytes.len() < 16 {
            return Err(CheckpointError::Truncated);
        }
        if &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let n = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let json = bytes.get(16..16 + n).ok_or(CheckpointError::Truncated)?;
        let header: Header = serde_json::from_slice(json)?;
        header.hyperparams.validate()?;
        let layout = Layout::new(&header.hyperparams, header.vocab_size);
        if layout.specs.len() != header.params.len() {
            return Err(CheckpointError::LayoutMismatch("parameter count".into()));
        }
        for (a, b) in layout.specs.iter().zip(&header.params) {
            if (&a.name, a.rows, a.cols, a.component) != (&b.name, b.rows, b.cols, b.component) {
                return Err(CheckpointError::LayoutMismatch(b.name.clone()));
            }
        }
        let payload = &bytes[16 + n..];
        if payload.len() != 8 * layout.total {
            return Err(CheckpointError::Truncated);
        }
        let data = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        Ok(Checkpoint {
            params: ModelParams { hp: header.hyperparams, vocab_size: header.vocab_size, layout, data },
            vocab_hash: header.vocab_hash,
            step: header.step,
            tags: header.tags,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        std::fs::write(path, self.to_bytes()).map_err(|source| CheckpointError::Io { path: path.to_path_buf(), source })
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let bytes = std::fs::read(path).map_err(|source| CheckpointError::Io { path: path.to_path_buf(), source })?;
        Self::from_bytes(&bytes)
    }
}

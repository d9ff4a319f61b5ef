//! Transformer encoder-decoder trained from scratch in `f64`.

mod beam;
mod checkpoint;
mod decoder;
mod layers;
pub mod linalg;
mod params;
mod transformer;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use beam::{beam_search, greedy_decode, DecodeOptions, Hypothesis};
pub use checkpoint::{Checkpoint, CheckpointError, CHECKPOINT_MAGIC};
pub use decoder::{decode_step, DecoderState, EncodedSource};
pub use params::{
    AttnIds, Component, DecLayerIds, EncLayerIds, FfnIds, Grads, Init, Layout, LinearIds, LnIds, ModelParams, ParamId,
    ParamSpec,
};
pub use transformer::{encode, gradients, loss, teacher_forced_probs, BatchLoss, Pair};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("token id {id} outside a vocabulary of {vocab}")]
    IdOutOfRange { id: u32, vocab: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("loss is not finite ({0})")]
    NonFiniteLoss(f64),
    #[error("empty batch")]
    EmptyBatch,
    #[error("empty sequence")]
    EmptySequence,
}

/// Model and optimization settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparams {
    /// Encoder layers; the decoder has as many.
    pub layers: usize,
    pub heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub dropout: f64,
    pub label_smoothing: f64,
    pub warmup_steps: usize,
    pub lr_factor: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Source plus target tokens per batch.
    pub batch_tokens: usize,
    pub max_steps: usize,
    pub checkpoint_every: usize,
    /// Reuse the embedding matrix as output projection instead of a
    /// separate generator.
    pub tie_generator: bool,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams::tiny()
    }
}

impl Hyperparams {
    /// 6 layers, 8 heads, 512/2048.
    pub fn base() -> Self {
        Hyperparams {
            layers: 6,
            heads: 8,
            d_model: 512,
            d_ff: 2048,
            dropout: 0.1,
            label_smoothing: 0.1,
            warmup_steps: 16_000,
            lr_factor: 2.0,
            adam_beta1: 0.9,
            adam_beta2: 0.998,
            adam_eps: 1e-9,
            batch_tokens: 8192,
            max_steps: 300_000,
            checkpoint_every: 5000,
            tie_generator: false,
        }
    }

    /// Desk-scale model: 2 layers, 4 heads, 64/256.
    pub fn tiny() -> Self {
        Hyperparams {
            layers: 2,
            heads: 4,
            d_model: 64,
            d_ff: 256,
            warmup_steps: 200,
            lr_factor: 1.0,
            batch_tokens: 2048,
            max_steps: 2000,
            checkpoint_every: 500,
            ..Hyperparams::base()
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidConfig(m));
        if self.heads == 0 || self.d_model == 0 || !self.d_model.is_multiple_of(self.heads) {
            return bad(format!("d_model {} is not divisible by {} heads", self.d_model, self.heads));
        }
        if self.d_ff == 0 {
            return bad("d_ff must be positive".into());
        }
        for (name, v) in [
            ("dropout", self.dropout),
            ("label_smoothing", self.label_smoothing),
            ("adam_beta1", self.adam_beta1),
            ("adam_beta2", self.adam_beta2),
        ] {
            if !(0.0..1.0).contains(&v) {
                return bad(format!("{name} must lie in [0, 1), got {v}"));
            }
        }
        if !(self.lr_factor > 0.0 && self.adam_eps > 0.0) {
            return bad("lr_factor and adam_eps must be positive".into());
        }
        if self.warmup_steps == 0 {
            return bad("warmup_steps must be positive".into());
        }
        Ok(())
    }
}

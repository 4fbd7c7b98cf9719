//! Model backend: tokenizer, the reference transformer, training, and
//! checkpoints.
//!
//! The surface is capability-based — forward with tensor capture, sampling off
//! logits, optimizer steps, and input-embedding gradients — so a larger
//! pretrained backend can slot in behind the same calls. One implementation
//! ships: the deterministic f64 reference model. `STYLEFORGE_BACKEND` (or the
//! CLI `--backend` flag) selects an implementation by name.

pub mod checkpoint;
pub mod model;
pub mod optim;
pub mod tensor;
pub mod tokenizer;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointManifest};
pub use model::{
    Capture, ForwardInput, ForwardTrace, LogitTarget, LoraConfig, LoraTarget, ModelConfig,
    ModelHandle, ModelKind, ReferenceModel,
};
pub use optim::{AdamHyper, AdamState};
pub use tensor::Mat;
pub use tokenizer::{extend_tokenizer, TokenId, Tokenizer};
pub use train::{batch_loss, train_step, Batch};

use crate::error::{Error, Result};

pub const BACKEND_ENV: &str = "STYLEFORGE_BACKEND";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackendId {
    Reference,
}

impl BackendId {
    pub fn from_name(name: &str) -> Result<BackendId> {
        match name {
            "reference" => Ok(BackendId::Reference),
            other => Err(Error::UnknownBackend(other.to_string())),
        }
    }

    /// Resolves the backend from `STYLEFORGE_BACKEND`, defaulting to the
    /// reference implementation.
    pub fn from_env() -> Result<BackendId> {
        match std::env::var(BACKEND_ENV) {
            Ok(name) => BackendId::from_name(&name),
            Err(_) => Ok(BackendId::Reference),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            BackendId::Reference => "reference",
        }
    }
}

/// Builds a model with the requested architecture behind the selected backend.
pub fn make_reference_model(config: ModelConfig) -> Result<ReferenceModel> {
    ReferenceModel::new(config)
}

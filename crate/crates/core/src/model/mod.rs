// SPDX-License-Identifier: MIT OR Apache-2.0

//! Minimal decoder-only transformer.
//!
//! Pre-norm blocks (attention then MLP) with learned positional embeddings,
//! all in `f32`. Block `t` (1-based) writes the residual stream value
//! `h(t)`; that value is the single tap used for both capture and
//! steering injection.

mod forward;
mod io;
mod params;
mod tokenizer;
mod train;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use forward::{ActivationTrace, ForwardOutput, InterventionSpec};
pub use io::{load_model, save_model, MODEL_MAGIC};
pub(crate) use io::Reader;
pub use params::{BlockParams, Params};
pub use tokenizer::{TokenId, Vocab};
pub use train::{mean_loss, train_toy, TrainOptions, TrainReport};

/// Shape hyperparameters of a [`ToyModel`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub num_layers: usize,
    pub hidden_size: usize,
    pub num_heads: usize,
    pub vocab_size: usize,
    pub max_seq_len: usize,
    pub seed: u64,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_layers == 0 {
            return Err(Error::arg("num_layers must be >= 1"));
        }
        if self.hidden_size == 0 || self.num_heads == 0 || self.hidden_size % self.num_heads != 0 {
            return Err(Error::arg(format!(
                "hidden_size {} must be a positive multiple of num_heads {}",
                self.hidden_size, self.num_heads
            )));
        }
        if self.vocab_size == 0 {
            return Err(Error::arg("vocab_size must be >= 1"));
        }
        if self.max_seq_len == 0 {
            return Err(Error::arg("max_seq_len must be >= 1"));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_size / self.num_heads
    }

    /// Width of the MLP hidden layer.
    pub fn mlp_size(&self) -> usize {
        4 * self.hidden_size
    }
}

/// Immutable transformer weights plus the vocabulary they were trained on.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    config: ModelConfig,
    vocab: Vocab,
    params: Params,
    id: String,
}

impl ToyModel {
    /// Wrap validated parameters. Fails if any value is non-finite or any
    /// tensor disagrees with `config`.
    pub fn new(config: ModelConfig, vocab: Vocab, params: Params) -> Result<Self> {
        config.validate()?;
        if vocab.len() != config.vocab_size {
            return Err(Error::Integrity(format!(
                "vocab has {} symbols but config declares {}",
                vocab.len(),
                config.vocab_size
            )));
        }
        params.check_shapes(&config)?;
        params.check_finite()?;
        let id = io::model_hash(&config, &vocab, &params);
        Ok(Self {
            config,
            vocab,
            params,
            id,
        })
    }

    /// Randomly initialised weights (seeded by `config.seed`).
    pub fn init(config: ModelConfig, vocab: Vocab) -> Result<Self> {
        config.validate()?;
        let params = Params::init(&config);
        Self::new(config, vocab, params)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    /// Hex SHA-256 of the serialized model; stable across save/load.
    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn num_layers(&self) -> usize {
        self.config.num_layers
    }

    pub fn hidden_size(&self) -> usize {
        self.config.hidden_size
    }
}

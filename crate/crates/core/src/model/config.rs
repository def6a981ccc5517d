// SPDX-License-Identifier: Apache-2.0

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape of a [`MicroTransformer`](super::MicroTransformer).
///
/// Blocks are pre-norm with RMS normalization (`x / sqrt(mean(x²) + norm_eps)`
/// times a learned gain) and a SiLU-gated feed-forward. Queries and keys
/// carry rotary position embeddings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformerConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_seq: usize,
    pub norm_eps: f64,
}

impl Default for TransformerConfig {
    fn default() -> Self {
        Self {
            vocab_size: 512,
            d_model: 64,
            n_layers: 4,
            n_heads: 4,
            d_ff: 256,
            max_seq: 16,
            norm_eps: 1e-6,
        }
    }
}

impl TransformerConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("vocab_size", self.vocab_size),
            ("d_model", self.d_model),
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("d_ff", self.d_ff),
            ("max_seq", self.max_seq),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if !(self.norm_eps > 0.0 && self.norm_eps.is_finite()) {
            return Err(Error::Config(
                "norm_eps must be a small positive number".into(),
            ));
        }
        Ok(())
    }

    /// Number of hidden-state snapshots a forward pass records: the input
    /// embeddings, one per block, and the final-norm output.
    pub fn n_states(&self) -> usize {
        self.n_layers + 2
    }

    /// Index of the final-norm output in [`HiddenStates`](super::HiddenStates).
    pub fn final_layer(&self) -> usize {
        self.n_layers + 1
    }
}

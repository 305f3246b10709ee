// SPDX-License-Identifier: MIT OR Apache-2.0

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Normalisation applied before attention, before the feed-forward block and
/// before the unembedding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormKind {
    PreNormRms,
    PreNormLayer,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub num_layers: usize,
    pub num_heads: usize,
    pub head_dim: usize,
    pub hidden_dim: usize,
    pub vocab_size: usize,
    pub max_seq_len: usize,
    pub norm_kind: NormKind,
    pub seed: u64,
}

impl ModelConfig {
    /// Desk-scale default: 4 layers, 4 heads of width 16, 256-token vocabulary.
    pub fn toy(seed: u64) -> Self {
        Self {
            num_layers: 4,
            num_heads: 4,
            head_dim: 16,
            hidden_dim: 64,
            vocab_size: 256,
            max_seq_len: 1024,
            norm_kind: NormKind::PreNormRms,
            seed,
        }
    }

    /// Inner width of the feed-forward block.
    pub fn ffn_dim(&self) -> usize {
        4 * self.hidden_dim
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("num_layers", self.num_layers),
            ("num_heads", self.num_heads),
            ("head_dim", self.head_dim),
            ("hidden_dim", self.hidden_dim),
            ("vocab_size", self.vocab_size),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::InvalidModelConfig(format!("{name} must be >= 1")));
            }
        }
        if self.hidden_dim != self.num_heads * self.head_dim {
            return Err(Error::InvalidModelConfig(format!(
                "hidden_dim {} != num_heads {} * head_dim {}",
                self.hidden_dim, self.num_heads, self.head_dim
            )));
        }
        if self.max_seq_len < 2 {
            return Err(Error::InvalidModelConfig("max_seq_len must be >= 2".into()));
        }
        if self.vocab_size > u32::MAX as usize {
            return Err(Error::InvalidModelConfig("vocab_size exceeds u32 ids".into()));
        }
        Ok(())
    }
}

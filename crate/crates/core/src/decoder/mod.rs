// SPDX-License-Identifier: MIT OR Apache-2.0

//! Minimal deterministic decoder-only transformer.
//!
//! The runtime is token-id native: a forward step embeds one token, runs it
//! through pre-norm attention + feed-forward blocks with rotary position
//! encoding, appends the token's keys/values to the per-layer cache and
//! returns final-layer logits together with every layer's attention row.
//!
//! A [`StepInterceptor`] is called once per layer per step, after the
//! attention weights exist, and may rewrite the cache entry of the current
//! position. This is the hook the smoother plugs into.

mod cache;
mod config;
mod format;
mod model;
mod vocab;
mod weights;

pub use cache::{CacheTail, KvCache, LayerCache};
pub use config::{ModelConfig, NormKind};
pub use format::{load_weights, read_weights, save_weights, write_weights, FORMAT_VERSION, MAGIC};
pub use model::{
    argmax, forward_step, greedy_decode, AttentionSnapshot, DecodeOptions, Generation,
    LayerAttention, LayerStep, NoopInterceptor, StepInterceptor, StepObservation, StepOutput,
    StepRecorder, TokenSequence,
};
pub use vocab::Vocab;
pub use weights::{init_random, LayerWeights, Tensor, Weights, EMBEDDING_STD};

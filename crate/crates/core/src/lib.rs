// SPDX-License-Identifier: MIT OR Apache-2.0

//! Decoder-only transformer runtime with an interceptable KV-cache and
//! entropy-guided adaptive EMA smoothing of cached keys and values.
//!
//! - [`numerics`]: softmax, entropy, cosine and small dense kernels.
//! - [`decoder`]: the toy transformer, its cache, weight file and greedy decoding.
//! - [`smoother`]: row-entropy, FIFO percentile rank, clipped coefficient and
//!   the EMA rewrite of the newest cache entry.
//! - [`instrumentation`]: traces and the offline analyses run over them.
//! - [`metrics`]: CHAIR and OPOPE calculators.
//! - [`harness`]: experiment orchestration behind the command-line tool.

pub mod decoder;
pub mod error;
pub mod harness;
pub mod instrumentation;
pub mod metrics;
pub mod numerics;
pub mod smoother;

pub use decoder::{
    forward_step, greedy_decode, init_random, load_weights, save_weights, AttentionSnapshot,
    DecodeOptions, Generation, KvCache, ModelConfig, NormKind, StepInterceptor, StepRecorder,
    Vocab, Weights,
};
pub use error::{Error, Result};
pub use smoother::{AdaptiveSmoother, SmoothDecision, SmoothMode, SmoothTarget, SmootherConfig};

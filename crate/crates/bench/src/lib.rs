// SPDX-License-Identifier: MIT OR Apache-2.0

//! Fixtures shared by the benchmarks.

use kvsmooth_core::{forward_step, init_random, KvCache, ModelConfig, Result, Weights};

/// Toy model plus a cache prefilled with `context` pseudo-random tokens.
pub fn prefilled(seed: u64, context: usize) -> Result<(Weights, KvCache)> {
    let mut config = ModelConfig::toy(seed);
    config.max_seq_len = config.max_seq_len.max(context + 1);
    let weights = init_random(&config)?;
    let mut cache = KvCache::new(config.num_layers, config.num_heads, config.head_dim);
    for pos in 0..context {
        let token = ((pos as u64 * 2654435761 + seed) % config.vocab_size as u64) as u32;
        forward_step(&weights, &mut cache, token, pos, None)?;
    }
    Ok((weights, cache))
}

/// A probability row of length `len` with a deterministic, non-uniform shape.
pub fn prob_row(len: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..len).map(|i| 1.0 + ((i * 37) % 11) as f64).collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / sum).collect()
}

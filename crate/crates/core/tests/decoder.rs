// SPDX-License-Identifier: MIT OR Apache-2.0

use kvsmooth_core::decoder::{LayerStep, NoopInterceptor};
use kvsmooth_core::{
    forward_step, greedy_decode, init_random, DecodeOptions, KvCache, ModelConfig, SmootherConfig,
    StepInterceptor,
};

fn small(seed: u64) -> ModelConfig {
    ModelConfig {
        num_layers: 2,
        num_heads: 2,
        head_dim: 8,
        hidden_dim: 16,
        vocab_size: 32,
        max_seq_len: 64,
        ..ModelConfig::toy(seed)
    }
}

#[test]
fn noop_interceptor_is_identity() {
    let w = init_random(&small(7)).unwrap();
    let opts = DecodeOptions::new(12);
    let prompt = [1, 5, 9, 3];
    let plain = greedy_decode(&w, &prompt, &opts, None, None).unwrap();
    let mut noop = NoopInterceptor;
    let hooked = greedy_decode(&w, &prompt, &opts, Some(&mut noop), None).unwrap();
    assert_eq!(plain.tokens, hooked.tokens);
    for l in 0..w.config.num_layers {
        assert_eq!(plain.cache.layer(l).keys(), hooked.cache.layer(l).keys());
        assert_eq!(plain.cache.layer(l).values(), hooked.cache.layer(l).values());
    }
}

#[test]
fn earlier_positions_ignore_later_tokens() {
    let w = init_random(&small(3)).unwrap();
    let cfg = &w.config;
    let run = |tokens: &[u32]| {
        let mut cache = KvCache::new(cfg.num_layers, cfg.num_heads, cfg.head_dim);
        tokens
            .iter()
            .enumerate()
            .map(|(p, &t)| forward_step(&w, &mut cache, t, p, None).unwrap().logits)
            .collect::<Vec<_>>()
    };
    let a = run(&[2, 4, 6, 8, 10]);
    let b = run(&[2, 4, 6, 30, 1]);
    assert_eq!(a[..3], b[..3]);
    assert_ne!(a[3], b[3]);
}

#[test]
fn decode_is_deterministic() {
    let w = init_random(&small(11)).unwrap();
    let opts = DecodeOptions::new(20);
    let a = greedy_decode(&w, &[0, 1, 2], &opts, None, None).unwrap();
    let b = greedy_decode(&w, &[0, 1, 2], &opts, None, None).unwrap();
    assert_eq!(a.tokens, b.tokens);
    assert_eq!(a.tokens.generated.len(), 20);
}

#[test]
fn eos_stops_generation() {
    let w = init_random(&small(5)).unwrap();
    let free = greedy_decode(&w, &[0, 1], &DecodeOptions::new(8), None, None).unwrap();
    let eos = free.tokens.generated[2];
    let opts = DecodeOptions {
        eos_token: Some(eos),
        ..DecodeOptions::new(8)
    };
    let stopped = greedy_decode(&w, &[0, 1], &opts, None, None).unwrap();
    let first = free.tokens.generated.iter().position(|&t| t == eos).unwrap();
    assert_eq!(stopped.tokens.generated, free.tokens.generated[..=first]);
}

/// Counts calls and checks the hook only sees its own position as writable.
#[derive(Default)]
struct Counter {
    calls: Vec<(usize, usize)>,
}

impl StepInterceptor for Counter {
    fn intercept(&mut self, step: LayerStep<'_>) {
        assert_eq!(step.cache.position(), Some(step.position));
        assert_eq!(step.cache.len(), step.position + 1);
        assert_eq!(step.attention.context_len(), step.position + 1);
        self.calls.push((step.layer, step.position));
    }
}

#[test]
fn interceptor_runs_on_generated_positions_only() {
    let w = init_random(&small(9)).unwrap();
    let mut c = Counter::default();
    let g = greedy_decode(&w, &[0, 1, 2], &DecodeOptions::new(5), Some(&mut c), None).unwrap();
    // Every fed-back generated token; the last one is never fed back.
    let positions: Vec<usize> = (3..2 + g.tokens.generated.len()).collect();
    let expected: Vec<(usize, usize)> = positions
        .iter()
        .flat_map(|&p| (0..2).map(move |l| (l, p)))
        .collect();
    assert_eq!(c.calls, expected);
}

#[test]
fn smoother_leaves_uncovered_layers_untouched() {
    let w = init_random(&small(13)).unwrap();
    let opts = DecodeOptions::new(16);
    let prompt = [3, 1, 4, 1, 5];
    let base = greedy_decode(&w, &prompt, &opts, None, None).unwrap();
    let cfg = SmootherConfig::default()
        .with_layers(1, 1)
        .with_mode(kvsmooth_core::SmoothMode::Fixed(0.5));
    let mut sm = kvsmooth_core::AdaptiveSmoother::new(cfg, 2).unwrap();
    let smoothed = greedy_decode(&w, &prompt, &opts, Some(&mut sm), None).unwrap();
    // Layer 0 never reads layer 1, and the first generated token comes from
    // an unsmoothed step, so layer 0 agrees on every position up to it.
    assert_eq!(base.tokens.generated[0], smoothed.tokens.generated[0]);
    let upto = (prompt.len() + 1) * base.cache.layer(0).width();
    assert_eq!(
        base.cache.layer(0).keys()[..upto],
        smoothed.cache.layer(0).keys()[..upto]
    );
    assert_ne!(base.cache.layer(1).keys(), smoothed.cache.layer(1).keys());
}

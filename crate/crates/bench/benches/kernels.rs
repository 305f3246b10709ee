// SPDX-License-Identifier: MIT OR Apache-2.0

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use kvsmooth_bench::prob_row;
use kvsmooth_core::numerics::{entropy, softmax};
use kvsmooth_core::smoother::{smooth_cache_tail, EntropyQueue};
use kvsmooth_core::{KvCache, SmoothTarget};

fn kernels(c: &mut Criterion) {
    let mut group = c.benchmark_group("kernels");
    for len in [64usize, 512] {
        let row = prob_row(len);
        let scores: Vec<f64> = row.iter().map(|p| p.ln()).collect();
        group.bench_with_input(BenchmarkId::new("entropy", len), &row, |b, row| {
            b.iter(|| entropy(black_box(row), 1e-10).expect("valid row"))
        });
        group.bench_with_input(BenchmarkId::new("softmax", len), &scores, |b, s| {
            b.iter(|| softmax(black_box(s)).expect("finite"))
        });
    }

    let width = 64;
    let mut cache = KvCache::new(1, 4, width / 4);
    let a = vec![0.5f32; width];
    let bvec = vec![-0.25f32; width];
    cache.append_position(&[&a], &[&a]).expect("append");
    cache.append_position(&[&bvec], &[&bvec]).expect("append");
    group.bench_function("blend_kv_row_64", |b| {
        b.iter(|| smooth_cache_tail(&mut cache, 0, 1, black_box(0.9), SmoothTarget::KeyValue))
    });

    let mut queue = EntropyQueue::new(1, 15);
    let mut z = 0.0f64;
    group.bench_function("queue_push_rank_m15", |b| {
        b.iter(|| {
            z = (z + 0.618).fract();
            queue.push_and_rank(0, black_box(z))
        })
    });
    group.finish();
}

criterion_group!(benches, kernels);
criterion_main!(benches);

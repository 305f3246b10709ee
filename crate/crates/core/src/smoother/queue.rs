// SPDX-License-Identifier: MIT OR Apache-2.0

use std::collections::VecDeque;

/// Per-layer FIFO of recent row-entropies.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropyQueue {
    capacity: usize,
    layers: Vec<VecDeque<f64>>,
}

impl EntropyQueue {
    pub fn new(num_layers: usize, capacity: usize) -> Self {
        assert!(capacity >= 1, "queue capacity must be >= 1");
        Self {
            capacity,
            layers: (0..num_layers)
                .map(|_| VecDeque::with_capacity(capacity))
                .collect(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self, layer: usize) -> usize {
        self.layers[layer].len()
    }

    pub fn is_empty(&self, layer: usize) -> bool {
        self.layers[layer].is_empty()
    }

    /// Entries of `layer`, oldest first.
    pub fn contents(&self, layer: usize) -> impl Iterator<Item = f64> + '_ {
        self.layers[layer].iter().copied()
    }

    /// Inserts `z` (evicting the oldest entry when full) and returns the
    /// number of entries strictly smaller than `z`. Ties are not counted.
    pub fn push_and_rank(&mut self, layer: usize, z: f64) -> usize {
        let q = &mut self.layers[layer];
        if q.len() == self.capacity {
            q.pop_front();
        }
        q.push_back(z);
        q.iter().filter(|&&v| v < z).count()
    }
}

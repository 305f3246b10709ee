// SPDX-License-Identifier: MIT OR Apache-2.0

//! Per-layer key/value cache.
//!
//! Each layer stores one row of `num_heads * head_dim` floats per position,
//! heads laid out contiguously within the row. Every layer always holds the
//! same number of positions.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LayerCache {
    keys: Vec<f32>,
    values: Vec<f32>,
    width: usize,
    len: usize,
}

impl LayerCache {
    fn new(width: usize, capacity: usize) -> Self {
        Self {
            keys: Vec::with_capacity(width * capacity),
            values: Vec::with_capacity(width * capacity),
            width,
            len: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Width of one cached row (`num_heads * head_dim`).
    pub fn width(&self) -> usize {
        self.width
    }

    /// Keys of every head at `pos`.
    pub fn key_row(&self, pos: usize) -> &[f32] {
        &self.keys[pos * self.width..(pos + 1) * self.width]
    }

    pub fn value_row(&self, pos: usize) -> &[f32] {
        &self.values[pos * self.width..(pos + 1) * self.width]
    }

    pub fn keys(&self) -> &[f32] {
        &self.keys
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    fn push(&mut self, key: &[f32], value: &[f32]) {
        self.keys.extend_from_slice(key);
        self.values.extend_from_slice(value);
        self.len += 1;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KvCache {
    layers: Vec<LayerCache>,
    num_heads: usize,
    head_dim: usize,
}

impl KvCache {
    pub fn new(num_layers: usize, num_heads: usize, head_dim: usize) -> Self {
        Self::with_capacity(num_layers, num_heads, head_dim, 0)
    }

    pub fn with_capacity(
        num_layers: usize,
        num_heads: usize,
        head_dim: usize,
        positions: usize,
    ) -> Self {
        Self {
            layers: (0..num_layers)
                .map(|_| LayerCache::new(num_heads * head_dim, positions))
                .collect(),
            num_heads,
            head_dim,
        }
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn num_heads(&self) -> usize {
        self.num_heads
    }

    pub fn head_dim(&self) -> usize {
        self.head_dim
    }

    /// Number of positions held; equal across layers.
    pub fn len(&self) -> usize {
        self.layers.first().map_or(0, LayerCache::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn layer(&self, layer: usize) -> &LayerCache {
        &self.layers[layer]
    }

    /// True when every layer holds the same number of positions.
    pub fn is_consistent(&self) -> bool {
        let n = self.len();
        self.layers.iter().all(|l| l.len == n)
    }

    /// Appends one position to every layer. `keys[l]` and `values[l]` are
    /// the full rows for layer `l`.
    pub fn append_position(&mut self, keys: &[&[f32]], values: &[&[f32]]) -> Result<()> {
        let width = self.num_heads * self.head_dim;
        if keys.len() != self.layers.len() || values.len() != self.layers.len() {
            return Err(Error::CacheMismatch(format!(
                "append needs {} layers of rows",
                self.layers.len()
            )));
        }
        if keys.iter().chain(values).any(|r| r.len() != width) {
            return Err(Error::CacheMismatch(format!("rows must have width {width}")));
        }
        for ((layer, k), v) in self.layers.iter_mut().zip(keys).zip(values) {
            layer.push(k, v);
        }
        Ok(())
    }

    pub(crate) fn push_layer(&mut self, layer: usize, key: &[f32], value: &[f32]) {
        self.layers[layer].push(key, value);
    }

    /// Restricted mutable view of one layer: earlier positions are readable,
    /// only the newest position is writable.
    pub fn tail_mut(&mut self, layer: usize) -> CacheTail<'_> {
        CacheTail {
            num_heads: self.num_heads,
            head_dim: self.head_dim,
            cache: &mut self.layers[layer],
        }
    }

    /// Bytes held by cached keys and values.
    pub fn size_bytes(&self) -> usize {
        self.layers
            .iter()
            .map(|l| (l.keys.len() + l.values.len()) * std::mem::size_of::<f32>())
            .sum()
    }
}

/// Mutable access to the newest cache position of one layer.
///
/// Cannot append or remove positions, so an interceptor holding it cannot
/// change the sequence length.
pub struct CacheTail<'a> {
    cache: &'a mut LayerCache,
    num_heads: usize,
    head_dim: usize,
}

impl CacheTail<'_> {
    /// A shorter-lived handle to the same tail, for wrapping interceptors.
    pub fn reborrow(&mut self) -> CacheTail<'_> {
        CacheTail {
            cache: self.cache,
            num_heads: self.num_heads,
            head_dim: self.head_dim,
        }
    }

    /// Position of the newest entry, or `None` for an empty layer.
    pub fn position(&self) -> Option<usize> {
        self.cache.len.checked_sub(1)
    }

    pub fn len(&self) -> usize {
        self.cache.len
    }

    pub fn is_empty(&self) -> bool {
        self.cache.len == 0
    }

    pub fn num_heads(&self) -> usize {
        self.num_heads
    }

    pub fn head_dim(&self) -> usize {
        self.head_dim
    }

    pub fn key_row(&self, pos: usize) -> &[f32] {
        self.cache.key_row(pos)
    }

    pub fn value_row(&self, pos: usize) -> &[f32] {
        self.cache.value_row(pos)
    }

    pub fn key(&self, pos: usize, head: usize) -> &[f32] {
        let row = self.cache.key_row(pos);
        &row[head * self.head_dim..(head + 1) * self.head_dim]
    }

    pub fn value(&self, pos: usize, head: usize) -> &[f32] {
        let row = self.cache.value_row(pos);
        &row[head * self.head_dim..(head + 1) * self.head_dim]
    }

    /// `(previous key row, current key row)`; previous is `None` at position 0.
    pub fn key_rows_mut(&mut self) -> Option<(Option<&[f32]>, &mut [f32])> {
        let w = self.cache.width;
        split_tail(&mut self.cache.keys, w)
    }

    pub fn value_rows_mut(&mut self) -> Option<(Option<&[f32]>, &mut [f32])> {
        let w = self.cache.width;
        split_tail(&mut self.cache.values, w)
    }
}

fn split_tail(buf: &mut [f32], width: usize) -> Option<(Option<&[f32]>, &mut [f32])> {
    if buf.len() < width {
        return None;
    }
    let at = buf.len() - width;
    let (head, current) = buf.split_at_mut(at);
    let prev = head.len().checked_sub(width).map(|p| &head[p..]);
    Some((prev.map(|p| &*p), current))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn append_keeps_layers_aligned() {
        let mut c = KvCache::new(2, 1, 2);
        c.append_position(&[&[1.0, 2.0], &[3.0, 4.0]], &[&[5.0, 6.0], &[7.0, 8.0]])
            .unwrap();
        assert_eq!(c.len(), 1);
        assert!(c.is_consistent());
        assert_eq!(c.layer(1).key_row(0), &[3.0, 4.0]);
        assert!(c.append_position(&[&[1.0]], &[&[1.0]]).is_err());
    }

    #[test]
    fn tail_exposes_previous_and_current() {
        let mut c = KvCache::new(1, 2, 1);
        c.append_position(&[&[1.0, 2.0]], &[&[0.0, 0.0]]).unwrap();
        {
            let mut t = c.tail_mut(0);
            let (prev, cur) = t.key_rows_mut().unwrap();
            assert!(prev.is_none());
            assert_eq!(cur, &[1.0, 2.0]);
        }
        c.append_position(&[&[3.0, 4.0]], &[&[0.0, 0.0]]).unwrap();
        let mut t = c.tail_mut(0);
        assert_eq!(t.position(), Some(1));
        assert_eq!(t.key(0, 1), &[2.0]);
        let (prev, cur) = t.key_rows_mut().unwrap();
        assert_eq!(prev.unwrap(), &[1.0, 2.0]);
        cur[0] = 9.0;
        assert_eq!(c.layer(0).key_row(1), &[9.0, 4.0]);
        assert_eq!(c.len(), 2);
    }

    #[test]
    fn empty_tail() {
        let mut c = KvCache::new(1, 1, 1);
        let mut t = c.tail_mut(0);
        assert!(t.position().is_none());
        assert!(t.key_rows_mut().is_none());
    }
}

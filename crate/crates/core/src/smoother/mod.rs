// SPDX-License-Identifier: MIT OR Apache-2.0

//! Entropy-guided adaptive EMA smoothing of the KV-cache.
//!
//! For every layer in the configured range and every generated position `t`:
//!
//! 1. `z` = head-averaged Shannon entropy of the current token's attention row.
//! 2. `z` enters a per-layer FIFO of capacity `M`; `k` counts queue entries
//!    strictly smaller than `z`.
//! 3. `λ̂ = k / M` (capacity divisor even while the queue is filling, which
//!    biases early coefficients low).
//! 4. `λ̃ = max(λ_ref - w, min(λ_ref + w, λ̂))`, then clamped into `[0, 1]`.
//! 5. `K_t ← (1 - λ̃) K_t + λ̃ K_{t-1}` (and `V` likewise), where `K_{t-1}` is
//!    whatever the cache holds at `t - 1`, i.e. already smoothed.
//!
//! In [`SmoothMode::Fixed`] steps 2–4 are skipped and the fixed coefficient
//! is used directly.

mod map;
mod queue;

pub use map::{map_objective, map_oracle, MapEstimate, MapOracleInputs};
pub use queue::EntropyQueue;

use serde::{Deserialize, Serialize};

use crate::decoder::{AttentionSnapshot, CacheTail, KvCache, LayerAttention, LayerStep, StepInterceptor};
use crate::error::{Error, Result};
use crate::numerics::{entropy, entropy_unchecked, DEFAULT_ENTROPY_EPS};

/// Which state the EMA is applied to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmoothTarget {
    KeyValue,
    KeyOnly,
    /// Blend the layer's attention output with its previous smoothed output;
    /// the cache is left untouched.
    AttnOutput,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmoothMode {
    Adaptive,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SmootherConfig {
    pub lambda_ref: f64,
    pub clip_width: f64,
    pub queue_capacity: usize,
    /// Inclusive, 0-indexed.
    pub layer_start: usize,
    /// Inclusive, 0-indexed.
    pub layer_end: usize,
    pub target: SmoothTarget,
    pub mode: SmoothMode,
    pub eps: f64,
}

impl Default for SmootherConfig {
    /// Settings used for 32-layer models: layers 3–31, queue of 15,
    /// `λ_ref = 0.9`, window ±0.2.
    fn default() -> Self {
        Self {
            lambda_ref: 0.9,
            clip_width: 0.2,
            queue_capacity: 15,
            layer_start: 3,
            layer_end: 31,
            target: SmoothTarget::KeyValue,
            mode: SmoothMode::Adaptive,
            eps: DEFAULT_ENTROPY_EPS,
        }
    }
}

impl SmootherConfig {
    pub fn with_layers(mut self, start: usize, end: usize) -> Self {
        self.layer_start = start;
        self.layer_end = end;
        self
    }

    pub fn with_lambda_ref(mut self, lambda_ref: f64) -> Self {
        self.lambda_ref = lambda_ref;
        self
    }

    pub fn with_mode(mut self, mode: SmoothMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_target(mut self, target: SmoothTarget) -> Self {
        self.target = target;
        self
    }

    pub fn validate(&self, num_layers: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidSmootherConfig(msg));
        if !(0.0..=1.0).contains(&self.lambda_ref) {
            return bad(format!("lambda_ref {} outside [0, 1]", self.lambda_ref));
        }
        if !(self.clip_width >= 0.0 && self.clip_width.is_finite()) {
            return bad(format!("clip_width {} must be >= 0", self.clip_width));
        }
        if self.queue_capacity == 0 {
            return bad("queue_capacity must be >= 1".into());
        }
        if self.layer_start > self.layer_end {
            return bad(format!(
                "layer_start {} > layer_end {}",
                self.layer_start, self.layer_end
            ));
        }
        if self.layer_end >= num_layers {
            return bad(format!(
                "layer_end {} >= num_layers {num_layers}",
                self.layer_end
            ));
        }
        if let SmoothMode::Fixed(l) = self.mode {
            if !(0.0..=1.0).contains(&l) {
                return bad(format!("fixed lambda {l} outside [0, 1]"));
            }
        }
        if !(self.eps >= 0.0 && self.eps.is_finite()) {
            return bad(format!("eps {} must be >= 0", self.eps));
        }
        Ok(())
    }

    pub fn covers(&self, layer: usize) -> bool {
        (self.layer_start..=self.layer_end).contains(&layer)
    }
}

/// Coefficients chosen for one `(layer, position)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothDecision {
    pub layer: usize,
    /// Cache position of the smoothed token.
    pub position: usize,
    /// Row-entropy in nats.
    pub z: f64,
    /// Strict-less rank; `None` in fixed mode.
    pub k: Option<usize>,
    /// `k / M`; `None` in fixed mode.
    pub lambda_hat: Option<f64>,
    pub lambda_tilde: f64,
    /// False when there was nothing to blend with (first position).
    pub applied: bool,
}

fn layer_entropy(attention: &LayerAttention, eps: f64) -> f64 {
    let sum: f64 = attention
        .heads
        .iter()
        .map(|row| entropy_unchecked(row, eps))
        .sum();
    (sum / attention.heads.len() as f64).max(0.0)
}

/// Head-averaged row-entropy of one layer's current attention rows.
///
/// The `eps` term can push a one-hot row to `-ln(1 + eps)`; the result is
/// floored at zero so it stays a valid entropy.
pub fn row_entropy(attention: &LayerAttention, num_heads: usize, eps: f64) -> Result<f64> {
    if attention.heads.len() != num_heads || num_heads == 0 {
        return Err(Error::MissingHeads {
            expected: num_heads,
            found: attention.heads.len(),
        });
    }
    let mut sum = 0.0;
    for row in &attention.heads {
        sum += entropy(row, eps)?;
    }
    Ok((sum / num_heads as f64).max(0.0))
}

/// [`row_entropy`] for one layer of a full snapshot.
pub fn snapshot_row_entropy(
    snapshot: &AttentionSnapshot,
    layer: usize,
    num_heads: usize,
    eps: f64,
) -> Result<f64> {
    let la = snapshot.layers.get(layer).ok_or(Error::LayerOutOfRange {
        layer,
        num_layers: snapshot.layers.len(),
    })?;
    row_entropy(la, num_heads, eps)
}

/// `λ̂ = k / M`.
pub fn adaptive_lambda(k: usize, capacity: usize) -> Result<f64> {
    if k >= capacity {
        return Err(Error::RankOutOfRange { k, capacity });
    }
    Ok(k as f64 / capacity as f64)
}

/// Clamps `λ̂` into `[λ_ref - w, λ_ref + w]`, then into `[0, 1]`.
pub fn clip_lambda(lambda_hat: f64, lambda_ref: f64, clip_width: f64) -> f64 {
    (lambda_ref - clip_width)
        .max((lambda_ref + clip_width).min(lambda_hat))
        .clamp(0.0, 1.0)
}

fn blend(current: &mut [f32], previous: &[f32], lambda: f64) {
    let keep = 1.0 - lambda;
    for (c, p) in current.iter_mut().zip(previous) {
        *c = (keep * f64::from(*c) + lambda * f64::from(*p)) as f32;
    }
}

/// EMA-rewrites the newest cache position from its predecessor.
///
/// Returns `false` (and changes nothing) at position 0, for `λ = 0`, or for
/// the [`SmoothTarget::AttnOutput`] target which does not touch the cache.
pub fn smooth_tail(tail: &mut CacheTail<'_>, lambda: f64, target: SmoothTarget) -> bool {
    if target == SmoothTarget::AttnOutput || tail.position().unwrap_or(0) == 0 {
        return false;
    }
    if lambda == 0.0 {
        return true;
    }
        if let Some((Some(prev), cur)) = tail.key_rows_mut() {
        blend(cur, prev, lambda);
    }
    if target == SmoothTarget::KeyValue {
        if let Some((Some(prev), cur)) = tail.value_rows_mut() {
            blend(cur, prev, lambda);
        }
    }
    true
}

/// [`smooth_tail`] addressed by layer and position; `t` must be the newest
/// position of the cache.
pub fn smooth_cache_tail(
    cache: &mut KvCache,
    layer: usize,
    t: usize,
    lambda: f64,
    target: SmoothTarget,
) -> Result<bool> {
    if layer >= cache.num_layers() {
        return Err(Error::LayerOutOfRange {
            layer,
            num_layers: cache.num_layers(),
        });
    }
    if cache.len() != t + 1 {
        return Err(Error::PositionMismatch {
            expected: cache.len().saturating_sub(1),
            got: t,
        });
    }
    Ok(smooth_tail(&mut cache.tail_mut(layer), lambda, target))
}

/// The smoothing interceptor. One instance per generation.
#[derive(Debug, Clone)]
pub struct AdaptiveSmoother {
    config: SmootherConfig,
    queue: EntropyQueue,
    decisions: Vec<SmoothDecision>,
    prev_output: Vec<Option<Vec<f32>>>,
}

impl AdaptiveSmoother {
    pub fn new(config: SmootherConfig, num_layers: usize) -> Result<Self> {
        config.validate(num_layers)?;
        Ok(Self {
            queue: EntropyQueue::new(num_layers, config.queue_capacity),
            decisions: Vec::new(),
            prev_output: vec![None; num_layers],
            config,
        })
    }

    pub fn config(&self) -> &SmootherConfig {
        &self.config
    }

    pub fn queue(&self) -> &EntropyQueue {
        &self.queue
    }

    pub fn decisions(&self) -> &[SmoothDecision] {
        &self.decisions
    }

    pub fn into_decisions(self) -> Vec<SmoothDecision> {
        self.decisions
    }

    /// Computes `(z, k, λ̂, λ̃)` for one layer; pushes onto the queue in
    /// adaptive mode.
    fn decide(&mut self, layer: usize, attention: &LayerAttention) -> (f64, Option<usize>, Option<f64>, f64) {
        let z = layer_entropy(attention, self.config.eps);
        match self.config.mode {
            SmoothMode::Fixed(l) => (z, None, None, l.clamp(0.0, 1.0)),
            SmoothMode::Adaptive => {
                let k = self.queue.push_and_rank(layer, z);
                let hat = k as f64 / self.config.queue_capacity as f64;
                let tilde = clip_lambda(hat, self.config.lambda_ref, self.config.clip_width);
                (z, Some(k), Some(hat), tilde)
            }
        }
    }
}

/// Builds the interceptor for a model with `num_layers` layers.
pub fn make_interceptor(config: SmootherConfig, num_layers: usize) -> Result<AdaptiveSmoother> {
    AdaptiveSmoother::new(config, num_layers)
}

impl StepInterceptor for AdaptiveSmoother {
    fn intercept(&mut self, mut step: LayerStep<'_>) {
        if !self.config.covers(step.layer) {
            return;
        }
        let (z, k, lambda_hat, lambda_tilde) = self.decide(step.layer, step.attention);
        let applied = match self.config.target {
            SmoothTarget::AttnOutput => match step.attn_output.as_deref_mut() {
                Some(out) => {
                    let slot = &mut self.prev_output[step.layer];
                    let applied = match slot {
                        Some(prev) => {
                            if lambda_tilde != 0.0 {
                                blend(out, prev, lambda_tilde);
                            }
                            true
                        }
                        None => false,
                    };
                    *slot = Some(out.to_vec());
                    applied
                }
                None => false,
            },
            target => smooth_tail(&mut step.cache, lambda_tilde, target),
        };
        self.decisions.push(SmoothDecision {
            layer: step.layer,
            position: step.position,
            z,
            k,
            lambda_hat,
            lambda_tilde,
            applied,
        });
    }
}

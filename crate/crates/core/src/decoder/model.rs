// SPDX-License-Identifier: MIT OR Apache-2.0

use serde::{Deserialize, Serialize};

use super::cache::{CacheTail, KvCache};
use super::config::NormKind;
use super::weights::{Tensor, Weights};
use crate::error::{Error, Result};
use crate::numerics::{dot_f32, matvec, softmax_in_place};

const NORM_EPS: f32 = 1e-5;
const ROPE_THETA: f32 = 10_000.0;

/// Attention rows of one layer at one step: `heads[h][j]` is the weight the
/// current query of head `h` puts on position `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerAttention {
    pub heads: Vec<Vec<f64>>,
}

impl LayerAttention {
    pub fn context_len(&self) -> usize {
        self.heads.first().map_or(0, Vec::len)
    }
}

/// Current token's attention rows for every layer.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionSnapshot {
    pub layers: Vec<LayerAttention>,
}

/// What an interceptor sees for one `(layer, position)`.
pub struct LayerStep<'a> {
    pub layer: usize,
    pub position: usize,
    pub attention: &'a LayerAttention,
    /// The layer's cache, writable only at `position`.
    pub cache: CacheTail<'a>,
    /// Concatenated per-head attention output (before the output projection).
    /// `None` when the hook runs before the output is computed.
    pub attn_output: Option<&'a mut [f32]>,
}

/// Per-layer, per-step hook into the forward pass.
pub trait StepInterceptor {
    fn intercept(&mut self, step: LayerStep<'_>);
}

/// Hook that does nothing.
#[derive(Debug, Default, Clone, Copy)]
pub struct NoopInterceptor;

impl StepInterceptor for NoopInterceptor {
    fn intercept(&mut self, _step: LayerStep<'_>) {}
}

/// One decoding step as seen by a recorder.
pub struct StepObservation<'a> {
    /// Index of the generated token this step produced (0-based).
    pub step: usize,
    /// Cache position of the input token.
    pub position: usize,
    pub input_token: u32,
    pub output_token: u32,
    pub logits: &'a [f32],
    pub attention: &'a AttentionSnapshot,
}

/// Observer of a generation. Prompt positions other than the last are
/// reported through `on_prefill`; the last prompt position and every
/// generated position go through `on_step`.
pub trait StepRecorder {
    fn on_prefill(&mut self, _position: usize, _attention: &AttentionSnapshot) {}
    fn on_step(&mut self, obs: &StepObservation<'_>);
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub logits: Vec<f32>,
    pub attention: AttentionSnapshot,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecodeOptions {
    pub max_new_tokens: usize,
    #[serde(default)]
    pub eos_token: Option<u32>,
    /// Also run the interceptor on prompt positions.
    #[serde(default)]
    pub intercept_prefill: bool,
    /// Run the interceptor before the attention output is computed, so the
    /// current step already reads the rewritten values.
    #[serde(default)]
    pub smooth_before_output: bool,
}

impl DecodeOptions {
    pub fn new(max_new_tokens: usize) -> Self {
        Self {
            max_new_tokens,
            eos_token: None,
            intercept_prefill: false,
            smooth_before_output: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub prompt: Vec<u32>,
    pub generated: Vec<u32>,
}

#[derive(Debug, Clone)]
pub struct Generation {
    pub tokens: TokenSequence,
    /// Cache state after the last forward step.
    pub cache: KvCache,
}

fn norm(x: &[f32], gain: &Tensor, kind: NormKind, out: &mut [f32]) {
    let n = x.len() as f32;
    match kind {
        NormKind::PreNormRms => {
            let ms = x.iter().map(|v| v * v).sum::<f32>() / n;
            let inv = 1.0 / (ms + NORM_EPS).sqrt();
            for ((o, v), g) in out.iter_mut().zip(x).zip(&gain.data) {
                *o = v * inv * g;
            }
        }
        NormKind::PreNormLayer => {
            let mean = x.iter().sum::<f32>() / n;
            let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / n;
            let inv = 1.0 / (var + NORM_EPS).sqrt();
            for ((o, v), g) in out.iter_mut().zip(x).zip(&gain.data) {
                *o = (v - mean) * inv * g;
            }
        }
    }
}

/// Rotates consecutive pairs of each head; an odd trailing dimension is left
/// untouched.
fn apply_rope(x: &mut [f32], num_heads: usize, head_dim: usize, position: usize) {
    let pairs = head_dim / 2;
    if pairs == 0 {
        return;
    }
    let pos = position as f32;
    for i in 0..pairs {
        let freq = ROPE_THETA.powf(-((2 * i) as f32) / head_dim as f32);
        let (sin, cos) = (pos * freq).sin_cos();
        for h in 0..num_heads {
            let base = h * head_dim + 2 * i;
            let (a, b) = (x[base], x[base + 1]);
            x[base] = a * cos - b * sin;
            x[base + 1] = a * sin + b * cos;
        }
    }
}

fn gelu(x: f32) -> f32 {
    const C: f32 = 0.797_884_6; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044_715 * x * x * x)).tanh())
}

fn attention_output(
    cache: &KvCache,
    layer: usize,
    rows: &LayerAttention,
    head_dim: usize,
    out: &mut [f32],
) {
    out.fill(0.0);
    let lc = cache.layer(layer);
    for (h, row) in rows.heads.iter().enumerate() {
        let o = &mut out[h * head_dim..(h + 1) * head_dim];
        for (j, &a) in row.iter().enumerate() {
            let a = a as f32;
            let v = &lc.value_row(j)[h * head_dim..(h + 1) * head_dim];
            for (oi, vi) in o.iter_mut().zip(v) {
                *oi += a * vi;
            }
        }
    }
}

/// One forward step with the interceptor run after the attention output
/// (the default ordering).
pub fn forward_step(
    weights: &Weights,
    cache: &mut KvCache,
    token: u32,
    position: usize,
    interceptor: Option<&mut dyn StepInterceptor>,
) -> Result<StepOutput> {
    forward_step_with(weights, cache, token, position, interceptor, false)
}

/// Embeds `token` at `position`, appends its keys/values to `cache` and
/// returns final-layer logits plus every layer's attention row.
///
/// Per layer the order is: project Q/K/V, rotate Q/K, append K/V, score
/// against all cached keys (scaled by `1/sqrt(head_dim)`), softmax, then
/// either (a) compute the output and call the interceptor, or, with
/// `smooth_before_output`, (b) call the interceptor and compute the output
/// from the possibly rewritten cache.
pub fn forward_step_with(
    weights: &Weights,
    cache: &mut KvCache,
    token: u32,
    position: usize,
    mut interceptor: Option<&mut dyn StepInterceptor>,
    smooth_before_output: bool,
) -> Result<StepOutput> {
    let cfg = &weights.config;
    if (token as usize) >= cfg.vocab_size {
        return Err(Error::TokenOutOfRange {
            token,
            vocab_size: cfg.vocab_size,
        });
    }
    if cache.num_layers() != cfg.num_layers
        || cache.num_heads() != cfg.num_heads
        || cache.head_dim() != cfg.head_dim
    {
        return Err(Error::CacheMismatch(format!(
            "cache is {}x{}x{}, model is {}x{}x{}",
            cache.num_layers(),
            cache.num_heads(),
            cache.head_dim(),
            cfg.num_layers,
            cfg.num_heads,
            cfg.head_dim
        )));
    }
    if !cache.is_consistent() {
        return Err(Error::CacheMismatch("layers hold different lengths".into()));
    }
    if position != cache.len() {
        return Err(Error::PositionMismatch {
            expected: cache.len(),
            got: position,
        });
    }
    if position >= cfg.max_seq_len {
        return Err(Error::BudgetExceeded {
            requested: position + 1,
            max: cfg.max_seq_len,
        });
    }

    let hd = cfg.hidden_dim;
    let nh = cfg.num_heads;
    let d = cfg.head_dim;
    let scale = 1.0 / (d as f64).sqrt();

    let mut x = weights.tok_embeddings.row(token as usize).to_vec();
    let mut xn = vec![0.0f32; hd];
    let mut q = vec![0.0f32; hd];
    let mut k = vec![0.0f32; hd];
    let mut v = vec![0.0f32; hd];
    let mut o = vec![0.0f32; hd];
    let mut proj = vec![0.0f32; hd];
    let mut ffn = vec![0.0f32; cfg.ffn_dim()];
    let mut layers = Vec::with_capacity(cfg.num_layers);

    for (l, lw) in weights.layers.iter().enumerate() {
        norm(&x, &lw.attn_norm, cfg.norm_kind, &mut xn);
        matvec(&lw.wq.data, hd, hd, &xn, &mut q);
        matvec(&lw.wk.data, hd, hd, &xn, &mut k);
        matvec(&lw.wv.data, hd, hd, &xn, &mut v);
        apply_rope(&mut q, nh, d, position);
        apply_rope(&mut k, nh, d, position);
        cache.push_layer(l, &k, &v);

        let ctx = position + 1;
        let lc = cache.layer(l);
        let mut heads = Vec::with_capacity(nh);
        for h in 0..nh {
            let qh = &q[h * d..(h + 1) * d];
            let mut row: Vec<f64> = (0..ctx)
                .map(|j| f64::from(dot_f32(qh, &lc.key_row(j)[h * d..(h + 1) * d])) * scale)
                .collect();
            softmax_in_place(&mut row);
            heads.push(row);
        }
        let rows = LayerAttention { heads };

        match interceptor.as_deref_mut() {
            Some(hook) if smooth_before_output => {
                hook.intercept(LayerStep {
                    layer: l,
                    position,
                    attention: &rows,
                    cache: cache.tail_mut(l),
                    attn_output: None,
                });
                attention_output(cache, l, &rows, d, &mut o);
            }
            Some(hook) => {
                attention_output(cache, l, &rows, d, &mut o);
                hook.intercept(LayerStep {
                    layer: l,
                    position,
                    attention: &rows,
                    cache: cache.tail_mut(l),
                    attn_output: Some(&mut o),
                });
            }
            None => attention_output(cache, l, &rows, d, &mut o),
        }
        if cache.layer(l).len() != ctx {
            return Err(Error::CacheMismatch(format!(
                "layer {l} length changed during interception"
            )));
        }

        matvec(&lw.wo.data, hd, hd, &o, &mut proj);
        for (xi, p) in x.iter_mut().zip(&proj) {
            *xi += p;
        }

        norm(&x, &lw.ffn_norm, cfg.norm_kind, &mut xn);
        matvec(&lw.w_up.data, cfg.ffn_dim(), hd, &xn, &mut ffn);
        for f in ffn.iter_mut() {
            *f = gelu(*f);
        }
        matvec(&lw.w_down.data, hd, cfg.ffn_dim(), &ffn, &mut proj);
        for (xi, p) in x.iter_mut().zip(&proj) {
            *xi += p;
        }
        layers.push(rows);
    }

    norm(&x, &weights.final_norm, cfg.norm_kind, &mut xn);
    let mut logits = vec![0.0f32; cfg.vocab_size];
    matvec(&weights.output.data, cfg.vocab_size, hd, &xn, &mut logits);
    Ok(StepOutput {
        logits,
        attention: AttentionSnapshot { layers },
    })
}

/// Index of the largest logit; ties go to the lowest id.
pub fn argmax(logits: &[f32]) -> u32 {
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate().skip(1) {
        if v > logits[best] {
            best = i;
        }
    }
    best as u32
}

fn reborrow<'b>(
    hook: &'b mut Option<&mut dyn StepInterceptor>,
) -> Option<&'b mut dyn StepInterceptor> {
    match hook {
        Some(h) => Some(&mut **h),
        None => None,
    }
}

/// Greedy decoding.
///
/// The prompt is prefilled one position at a time; the interceptor only runs
/// on positions holding generated tokens unless `intercept_prefill` is set.
/// Generation stops after `max_new_tokens` tokens or right after emitting
/// `eos_token`. The final generated token is never fed back.
pub fn greedy_decode(
    weights: &Weights,
    prompt: &[u32],
    options: &DecodeOptions,
    mut interceptor: Option<&mut dyn StepInterceptor>,
    mut recorder: Option<&mut dyn StepRecorder>,
) -> Result<Generation> {
    let cfg = &weights.config;
    if prompt.is_empty() {
        return Err(Error::EmptyInput);
    }
    let requested = prompt.len() + options.max_new_tokens;
    if requested > cfg.max_seq_len {
        return Err(Error::BudgetExceeded {
            requested,
            max: cfg.max_seq_len,
        });
    }
    if let Some(&bad) = prompt.iter().find(|&&t| t as usize >= cfg.vocab_size) {
        return Err(Error::TokenOutOfRange {
            token: bad,
            vocab_size: cfg.vocab_size,
        });
    }

    let mut cache = KvCache::with_capacity(cfg.num_layers, cfg.num_heads, cfg.head_dim, requested);
    let mut generated = Vec::with_capacity(options.max_new_tokens);
    let last = prompt.len() - 1;

    for (pos, &tok) in prompt.iter().enumerate() {
        let hook = if options.intercept_prefill {
            reborrow(&mut interceptor)
        } else {
            None
        };
        let out = forward_step_with(
            weights,
            &mut cache,
            tok,
            pos,
            hook,
            options.smooth_before_output,
        )?;
        if pos < last {
            if let Some(r) = recorder.as_deref_mut() {
                r.on_prefill(pos, &out.attention);
            }
            continue;
        }
        if options.max_new_tokens == 0 {
            break;
        }
        let next = argmax(&out.logits);
        if let Some(r) = recorder.as_deref_mut() {
            r.on_step(&StepObservation {
                step: 0,
                position: pos,
                input_token: tok,
                output_token: next,
                logits: &out.logits,
                attention: &out.attention,
            });
        }
        generated.push(next);
    }

    while generated.len() < options.max_new_tokens {
        let prev = *generated.last().expect("at least one generated token");
        if options.eos_token == Some(prev) {
            break;
        }
        let pos = cache.len();
        let out = forward_step_with(
            weights,
            &mut cache,
            prev,
            pos,
            reborrow(&mut interceptor),
            options.smooth_before_output,
        )?;
        let next = argmax(&out.logits);
        if let Some(r) = recorder.as_deref_mut() {
            r.on_step(&StepObservation {
                step: generated.len(),
                position: pos,
                input_token: prev,
                output_token: next,
                logits: &out.logits,
                attention: &out.attention,
            });
        }
        generated.push(next);
    }

    Ok(Generation {
        tokens: TokenSequence {
            prompt: prompt.to_vec(),
            generated,
        },
        cache,
    })
}

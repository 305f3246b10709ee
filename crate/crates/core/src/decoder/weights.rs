// SPDX-License-Identifier: MIT OR Apache-2.0

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use super::config::ModelConfig;
use crate::error::{Error, Result};

/// Dense row-major `f32` tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn filled(shape: &[usize], value: f32) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f32>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::HeaderInconsistent(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    fn random(shape: &[usize], std: f32, rng: &mut ChaCha8Rng) -> Self {
        let normal = Normal::new(0.0f32, std).expect("std is positive and finite");
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..n).map(|_| normal.sample(rng)).collect(),
        }
    }

    pub fn row(&self, i: usize) -> &[f32] {
        let cols = self.shape[1];
        &self.data[i * cols..(i + 1) * cols]
    }
}

/// Parameters of one transformer block. Projection matrices are stored as
/// `[out, in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub attn_norm: Tensor,
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
    pub wo: Tensor,
    pub ffn_norm: Tensor,
    pub w_up: Tensor,
    pub w_down: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    pub config: ModelConfig,
    pub tok_embeddings: Tensor,
    pub layers: Vec<LayerWeights>,
    pub final_norm: Tensor,
    pub output: Tensor,
}

/// Expected `(name, shape)` of every tensor, in manifest order.
pub(crate) fn tensor_layout(config: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let h = config.hidden_dim;
    let f = config.ffn_dim();
    let v = config.vocab_size;
    let mut out = vec![("tok_embeddings".to_string(), vec![v, h])];
    for l in 0..config.num_layers {
        let p = format!("layers.{l}");
        out.push((format!("{p}.attn_norm"), vec![h]));
        out.push((format!("{p}.wq"), vec![h, h]));
        out.push((format!("{p}.wk"), vec![h, h]));
        out.push((format!("{p}.wv"), vec![h, h]));
        out.push((format!("{p}.wo"), vec![h, h]));
        out.push((format!("{p}.ffn_norm"), vec![h]));
        out.push((format!("{p}.w_up"), vec![f, h]));
        out.push((format!("{p}.w_down"), vec![h, f]));
    }
    out.push(("final_norm".to_string(), vec![h]));
    out.push(("output".to_string(), vec![v, h]));
    out
}

impl Weights {
    /// All tensors in manifest order, paired with their names.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![("tok_embeddings".to_string(), &self.tok_embeddings)];
        for (l, lw) in self.layers.iter().enumerate() {
            let p = format!("layers.{l}");
            out.push((format!("{p}.attn_norm"), &lw.attn_norm));
            out.push((format!("{p}.wq"), &lw.wq));
            out.push((format!("{p}.wk"), &lw.wk));
            out.push((format!("{p}.wv"), &lw.wv));
            out.push((format!("{p}.wo"), &lw.wo));
            out.push((format!("{p}.ffn_norm"), &lw.ffn_norm));
            out.push((format!("{p}.w_up"), &lw.w_up));
            out.push((format!("{p}.w_down"), &lw.w_down));
        }
        out.push(("final_norm".to_string(), &self.final_norm));
        out.push(("output".to_string(), &self.output));
        out
    }

    /// Builds weights from tensors given in manifest order.
    pub(crate) fn from_ordered(config: ModelConfig, tensors: Vec<Tensor>) -> Result<Self> {
        let expected = 3 + 8 * config.num_layers;
        if tensors.len() != expected {
            return Err(Error::HeaderInconsistent(format!(
                "expected {expected} tensors, got {}",
                tensors.len()
            )));
        }
        let mut it = tensors.into_iter();
        let mut next = || it.next().expect("length checked above");
        let tok_embeddings = next();
        let mut layers = Vec::with_capacity(config.num_layers);
        for _ in 0..config.num_layers {
            layers.push(LayerWeights {
                attn_norm: next(),
                wq: next(),
                wk: next(),
                wv: next(),
                wo: next(),
                ffn_norm: next(),
                w_up: next(),
                w_down: next(),
            });
        }
        let final_norm = next();
        let output = next();
        let w = Self {
            config,
            tok_embeddings,
            layers,
            final_norm,
            output,
        };
        w.validate()?;
        Ok(w)
    }

    /// Checks tensor shapes against the config and that every value is finite.
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        if self.layers.len() != self.config.num_layers {
            return Err(Error::HeaderInconsistent(format!(
                "config declares {} layers, weights hold {}",
                self.config.num_layers,
                self.layers.len()
            )));
        }
        for ((name, tensor), (_, shape)) in self
            .named_tensors()
            .into_iter()
            .zip(tensor_layout(&self.config))
        {
            if tensor.shape != shape {
                return Err(Error::HeaderInconsistent(format!(
                    "{name}: shape {:?}, expected {shape:?}",
                    tensor.shape
                )));
            }
            if tensor.data.len() != shape.iter().product::<usize>() {
                return Err(Error::HeaderInconsistent(format!("{name}: data length")));
            }
            if tensor.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::HeaderInconsistent(format!("{name}: non-finite value")));
            }
        }
        Ok(())
    }

    /// SHA-256 over the config and every tensor's little-endian bytes.
    pub fn checksum(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(serde_json::to_vec(&self.config).expect("config serialises"));
        for (name, t) in self.named_tensors() {
            hasher.update(name.as_bytes());
            for v in &t.data {
                hasher.update(v.to_le_bytes());
            }
        }
        hex::encode(hasher.finalize())
    }

    /// Bytes held by the parameters.
    pub fn size_bytes(&self) -> usize {
        self.named_tensors()
            .iter()
            .map(|(_, t)| t.data.len() * std::mem::size_of::<f32>())
            .sum()
    }
}

/// Standard deviation of randomly initialised token embeddings.
pub const EMBEDDING_STD: f32 = 0.02;

/// Deterministic random weights from `config.seed`.
///
/// Values are drawn from a ChaCha8 stream in manifest order. Projections use
/// `N(0, 1/fan_in)` so activations and logits stay O(1); embeddings use
/// standard deviation [`EMBEDDING_STD`]; norm gains start at one.
pub fn init_random(config: &ModelConfig) -> Result<Weights> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let h = config.hidden_dim;
    let f = config.ffn_dim();
    let v = config.vocab_size;
    let fan = |n: usize| 1.0 / (n as f32).sqrt();

    let tok_embeddings = Tensor::random(&[v, h], EMBEDDING_STD, &mut rng);
    let mut layers = Vec::with_capacity(config.num_layers);
    for _ in 0..config.num_layers {
        layers.push(LayerWeights {
            attn_norm: Tensor::filled(&[h], 1.0),
            wq: Tensor::random(&[h, h], fan(h), &mut rng),
            wk: Tensor::random(&[h, h], fan(h), &mut rng),
            wv: Tensor::random(&[h, h], fan(h), &mut rng),
            wo: Tensor::random(&[h, h], fan(h), &mut rng),
            ffn_norm: Tensor::filled(&[h], 1.0),
            w_up: Tensor::random(&[f, h], fan(h), &mut rng),
            w_down: Tensor::random(&[h, f], fan(f), &mut rng),
        });
    }
    let final_norm = Tensor::filled(&[h], 1.0);
    let output = Tensor::random(&[v, h], fan(h), &mut rng);
    Ok(Weights {
        config: config.clone(),
        tok_embeddings,
        layers,
        final_norm,
        output,
    })
}

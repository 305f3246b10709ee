// SPDX-License-Identifier: MIT OR Apache-2.0

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::decoder::{init_random, load_weights, DecodeOptions, ModelConfig, Vocab, Weights};
use crate::error::{Error, Result};
use crate::instrumentation::TraceConfig;
use crate::metrics::{parse_jsonl, Aggregation, DEFAULT_BETA};
use crate::smoother::SmootherConfig;

/// Default generation budget per prompt.
pub const DEFAULT_MAX_NEW_TOKENS: usize = 512;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelSource {
    /// A KVSM weight file.
    Path(PathBuf),
    /// Random weights from a config (its `seed` drives initialisation).
    Config(ModelConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptSource {
    /// JSON-lines of `{prompt_id, tokens}` or `{prompt_id, text}`.
    pub path: PathBuf,
    /// Vocabulary for `text` prompts and for decoding outputs.
    #[serde(default)]
    pub vocab: Option<PathBuf>,
}

/// Inputs needed to score generations.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalInputs {
    pub annotations: PathBuf,
    pub lexicon: PathBuf,
    #[serde(default)]
    pub probes: Option<PathBuf>,
    #[serde(default)]
    pub aggregation: Aggregation,
    #[serde(default = "default_beta")]
    pub beta: f64,
}

fn default_beta() -> f64 {
    DEFAULT_BETA
}

fn default_max_new_tokens() -> usize {
    DEFAULT_MAX_NEW_TOKENS
}

fn default_threads() -> usize {
    1
}

/// One experiment, as a single JSON document. Relative paths are resolved
/// against the directory of the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: ModelSource,
    /// Overrides the model seed for [`ModelSource::Config`].
    #[serde(default)]
    pub seed: Option<u64>,
    pub prompts: PromptSource,
    #[serde(default = "default_max_new_tokens")]
    pub max_new_tokens: usize,
    #[serde(default)]
    pub eos_token: Option<u32>,
    /// `None` disables smoothing.
    #[serde(default)]
    pub smoother: Option<SmootherConfig>,
    #[serde(default)]
    pub intercept_prefill: bool,
    #[serde(default)]
    pub smooth_before_output: bool,
    #[serde(default)]
    pub trace: TraceConfig,
    /// Adds wall-clock fields to records (makes output run-dependent).
    #[serde(default)]
    pub record_timing: bool,
    #[serde(default)]
    pub eval: Option<EvalInputs>,
    #[serde(default = "default_threads")]
    pub threads: usize,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn new(model: ModelSource, prompts: PromptSource) -> Self {
        Self {
            model,
            seed: None,
            prompts,
            max_new_tokens: DEFAULT_MAX_NEW_TOKENS,
            eos_token: None,
            smoother: None,
            intercept_prefill: false,
            smooth_before_output: false,
            trace: TraceConfig::default(),
            record_timing: false,
            eval: None,
            threads: 1,
            out: None,
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if let Some(dir) = path.parent() {
            cfg.resolve_paths(dir);
        }
        Ok(cfg)
    }

    /// Makes every relative path absolute with respect to `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let ModelSource::Path(p) = &mut self.model {
            fix(p);
        }
        fix(&mut self.prompts.path);
        if let Some(v) = &mut self.prompts.vocab {
            fix(v);
        }
        if let Some(e) = &mut self.eval {
            fix(&mut e.annotations);
            fix(&mut e.lexicon);
            if let Some(p) = &mut e.probes {
                fix(p);
            }
        }
        if let Some(o) = &mut self.out {
            fix(o);
        }
    }

    pub fn decode_options(&self) -> DecodeOptions {
        DecodeOptions {
            max_new_tokens: self.max_new_tokens,
            eos_token: self.eos_token,
            intercept_prefill: self.intercept_prefill,
            smooth_before_output: self.smooth_before_output,
        }
    }

    pub fn load_weights(&self) -> Result<Weights> {
        match &self.model {
            ModelSource::Path(p) => {
                let (_, w) = load_weights(p)?;
                Ok(w)
            }
            ModelSource::Config(c) => {
                let mut c = c.clone();
                if let Some(seed) = self.seed {
                    c.seed = seed;
                }
                init_random(&c)
            }
        }
    }

    pub fn load_vocab(&self) -> Result<Option<Vocab>> {
        self.prompts.vocab.as_ref().map(Vocab::load).transpose()
    }

    pub fn load_prompts(&self, vocab: Option<&Vocab>) -> Result<Vec<Prompt>> {
        let path = &self.prompts.path;
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let entries: Vec<PromptEntry> = parse_jsonl(&text, path)?;
        entries
            .into_iter()
            .enumerate()
            .map(|(i, e)| {
                let tokens = match (e.tokens, e.text) {
                    (Some(t), None) => t,
                    (None, Some(text)) => vocab
                        .ok_or_else(|| Error::Config("text prompts need prompts.vocab".into()))?
                        .encode(&text)?,
                    _ => {
                        return Err(Error::Schema {
                            path: path.clone(),
                            line: i + 1,
                            message: "exactly one of `tokens` or `text` is required".into(),
                        })
                    }
                };
                if tokens.is_empty() {
                    return Err(Error::Schema {
                        path: path.clone(),
                        line: i + 1,
                        message: "empty prompt".into(),
                    });
                }
                Ok(Prompt {
                    prompt_id: e.prompt_id.unwrap_or_else(|| i.to_string()),
                    tokens,
                })
            })
            .collect()
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PromptEntry {
    #[serde(default)]
    prompt_id: Option<String>,
    #[serde(default)]
    tokens: Option<Vec<u32>>,
    #[serde(default)]
    text: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub prompt_id: String,
    pub tokens: Vec<u32>,
}

/// Everything that determines the generated records, hashed into the
/// config digest. Paths are replaced by content (weights checksum, prompt
/// tokens) so relocating files does not change the digest.
#[derive(Serialize)]
struct DigestInput<'a> {
    weights_checksum: &'a str,
    prompts: &'a [Prompt],
    decode: &'a DecodeOptions,
    smoother: &'a Option<SmootherConfig>,
    trace: &'a TraceConfig,
}

pub fn config_digest(
    config: &RunConfig,
    weights: &Weights,
    prompts: &[Prompt],
) -> String {
    let input = DigestInput {
        weights_checksum: &weights.checksum(),
        prompts,
        decode: &config.decode_options(),
        smoother: &config.smoother,
        trace: &config.trace,
    };
    let bytes = serde_json::to_vec(&input).expect("digest input serialises");
    hex::encode(Sha256::digest(bytes))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_minimal_config_and_resolve() {
        let json = r#"{
            "model": {"path": "m.kvsm"},
            "prompts": {"path": "p.jsonl", "vocab": "v.json"},
            "smoother": {"lambda_ref": 0.7, "layer_start": 1, "layer_end": 3}
        }"#;
        let mut c: RunConfig = serde_json::from_str(json).unwrap();
        assert_eq!(c.max_new_tokens, 512);
        assert_eq!(c.threads, 1);
        assert_eq!(c.smoother.as_ref().unwrap().queue_capacity, 15);
        c.resolve_paths(Path::new("/data"));
        assert_eq!(c.model, ModelSource::Path("/data/m.kvsm".into()));
        assert_eq!(c.prompts.vocab.as_deref(), Some(Path::new("/data/v.json")));
    }

    #[test]
    fn prompts_need_exactly_one_field() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("p.jsonl");
        std::fs::write(&p, "{\"prompt_id\":\"a\",\"tokens\":[1,2]}\n{\"prompt_id\":\"b\"}\n").unwrap();
        let c = RunConfig::new(
            ModelSource::Config(ModelConfig::toy(0)),
            PromptSource { path: p, vocab: None },
        );
        match c.load_prompts(None) {
            Err(Error::Schema { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn digest_tracks_inputs() {
        let c = RunConfig::new(
            ModelSource::Config(ModelConfig::toy(0)),
            PromptSource {
                path: "unused".into(),
                vocab: None,
            },
        );
        let w = c.load_weights().unwrap();
        let prompts = vec![Prompt {
            prompt_id: "0".into(),
            tokens: vec![1, 2, 3],
        }];
        let a = config_digest(&c, &w, &prompts);
        assert_eq!(a, config_digest(&c, &w, &prompts));
        let mut c2 = c.clone();
        c2.max_new_tokens = 3;
        assert_ne!(a, config_digest(&c2, &w, &prompts));
    }
}

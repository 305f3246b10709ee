// SPDX-License-Identifier: MIT OR Apache-2.0

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{config_digest, Prompt, RunConfig};
use crate::decoder::{greedy_decode, StepInterceptor, StepRecorder, Vocab, Weights};
use crate::error::{Error, Result};
use crate::instrumentation::{TraceRecord, TraceRecorder};
use crate::smoother::{AdaptiveSmoother, SmoothDecision};

/// Version of the generation JSONL record layout.
pub const GENERATION_SCHEMA_VERSION: u32 = 1;

/// Per generated token: row-entropy of every layer and, for smoothed
/// layers, the chosen coefficients (`null` elsewhere).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub position: usize,
    pub token: u32,
    pub z: Vec<f64>,
    pub lambda_hat: Vec<Option<f64>>,
    pub lambda_tilde: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub total_ms: f64,
    pub ms_per_token: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub schema_version: u32,
    pub run_id: String,
    pub config_digest: String,
    pub prompt_id: String,
    pub prompt: Vec<u32>,
    pub generated: Vec<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    pub steps: Vec<StepRecord>,
    /// Weights plus final cache size; analytic, not measured.
    pub peak_memory_estimate_bytes: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timing: Option<Timing>,
}

impl GenerationRecord {
    pub fn decisions(&self) -> impl Iterator<Item = (usize, f64, Option<f64>)> + '_ {
        self.steps.iter().flat_map(|s| {
            s.lambda_tilde
                .iter()
                .zip(&s.lambda_hat)
                .enumerate()
                .filter_map(|(l, (t, h))| t.map(|t| (l, t, *h)))
        })
    }
}

/// Output of one prompt: the JSONL record plus the full trace.
#[derive(Debug, Clone)]
pub struct PromptRun {
    pub record: GenerationRecord,
    pub trace: TraceRecord,
    pub decisions: Vec<SmoothDecision>,
}

fn step_records(trace: &TraceRecord, num_layers: usize) -> Vec<StepRecord> {
    trace
        .steps
        .iter()
        .map(|s| {
            let mut hat = vec![None; num_layers];
            let mut tilde = vec![None; num_layers];
            for d in &s.decisions {
                hat[d.layer] = d.lambda_hat;
                tilde[d.layer] = Some(d.lambda_tilde);
            }
            StepRecord {
                step: s.step,
                position: s.position,
                token: s.output_token,
                z: s.z.clone(),
                lambda_hat: hat,
                lambda_tilde: tilde,
            }
        })
        .collect()
}

/// Runs one prompt with a fresh smoother and trace recorder.
pub fn run_prompt(
    config: &RunConfig,
    weights: &Weights,
    vocab: Option<&Vocab>,
    prompt: &Prompt,
    digest: &str,
) -> Result<PromptRun> {
    let cfg = &weights.config;
    let mut smoother = config
        .smoother
        .clone()
        .map(|s| AdaptiveSmoother::new(s, cfg.num_layers))
        .transpose()?;
    let mut recorder = TraceRecorder::new(config.trace.clone(), cfg.num_layers, cfg.num_heads);
    if let Some(s) = &smoother {
        recorder = recorder.with_eps(s.config().eps);
    }
    let options = config.decode_options();

    let start = Instant::now();
    let generation = greedy_decode(
        weights,
        &prompt.tokens,
        &options,
        smoother.as_mut().map(|s| s as &mut dyn StepInterceptor),
        Some(&mut recorder as &mut dyn StepRecorder),
    )?;
    let elapsed_ms = start.elapsed().as_secs_f64() * 1e3;

    let decisions = smoother.map(AdaptiveSmoother::into_decisions).unwrap_or_default();
    let trace = recorder.finish(&decisions);
    let generated = generation.tokens.generated;
    let timing = config.record_timing.then(|| Timing {
        total_ms: elapsed_ms,
        ms_per_token: elapsed_ms / generated.len().max(1) as f64,
    });
    let record = GenerationRecord {
        schema_version: GENERATION_SCHEMA_VERSION,
        run_id: digest[..16].to_string(),
        config_digest: digest.to_string(),
        prompt_id: prompt.prompt_id.clone(),
        prompt: prompt.tokens.clone(),
        text: vocab.map(|v| v.decode(&generated)),
        generated,
        steps: step_records(&trace, cfg.num_layers),
        peak_memory_estimate_bytes: weights.size_bytes() + generation.cache.size_bytes(),
        timing,
    };
    Ok(PromptRun {
        record,
        trace,
        decisions,
    })
}

/// Runs every prompt, in parallel on `threads` workers; results keep
/// prompt order.
pub fn run_prompts(
    config: &RunConfig,
    weights: &Weights,
    vocab: Option<&Vocab>,
    prompts: &[Prompt],
    threads: usize,
) -> Result<Vec<PromptRun>> {
    if prompts.is_empty() {
        return Err(Error::NoWork("prompt file is empty".into()));
    }
    if let Some(s) = &config.smoother {
        s.validate(weights.config.num_layers)?;
    }
    let digest = config_digest(config, weights, prompts);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| {
        prompts
            .par_iter()
            .map(|p| run_prompt(config, weights, vocab, p, &digest))
            .collect()
    })
}

/// Loads model and prompts from `config` and generates one record per prompt.
pub fn cmd_generate(config: &RunConfig) -> Result<Vec<GenerationRecord>> {
    let weights = config.load_weights()?;
    let vocab = config.load_vocab()?;
    let prompts = config.load_prompts(vocab.as_ref())?;
    Ok(run_prompts(config, &weights, vocab.as_ref(), &prompts, config.threads)?
        .into_iter()
        .map(|r| r.record)
        .collect())
}

pub fn write_jsonl<T: Serialize, W: Write>(mut out: W, items: &[T]) -> Result<()> {
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.write_all(b"\n").map_err(|e| Error::io("<jsonl>", e))?;
    }
    Ok(())
}

pub fn write_jsonl_file<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(f);
    write_jsonl(&mut w, items)?;
    w.flush().map_err(|e| Error::io(path, e))
}

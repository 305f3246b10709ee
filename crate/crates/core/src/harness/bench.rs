// SPDX-License-Identifier: MIT OR Apache-2.0

use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{Prompt, RunConfig};
use crate::decoder::{greedy_decode, StepInterceptor, Weights};
use crate::error::{Error, Result};
use crate::smoother::{AdaptiveSmoother, SmootherConfig};

/// Summary of one arm over all repetitions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmStats {
    pub ms_per_token_median: f64,
    pub ms_per_token_min: f64,
    pub ms_per_token_max: f64,
    pub tokens_per_s_median: f64,
    pub s_per_caption_median: f64,
    pub tokens: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub schema_version: u32,
    pub repetitions: usize,
    pub prompts: usize,
    pub baseline: ArmStats,
    pub smoothed: ArmStats,
    /// `smoothed / baseline - 1` on median ms/token.
    pub overhead: f64,
    pub peak_rss_bytes: Option<u64>,
    pub peak_memory_method: String,
}

impl BenchReport {
    pub fn to_text(&self) -> String {
        let row = |name: &str, a: &ArmStats| {
            format!(
                "{name:<9} {:>9.3} {:>9.3} {:>9.3} {:>10.1} {:>10.4}\n",
                a.ms_per_token_median,
                a.ms_per_token_min,
                a.ms_per_token_max,
                a.tokens_per_s_median,
                a.s_per_caption_median
            )
        };
        let mut s = format!(
            "{:<9} {:>9} {:>9} {:>9} {:>10} {:>10}\n",
            "arm", "ms/tok", "min", "max", "tok/s", "s/caption"
        );
        s.push_str(&row("baseline", &self.baseline));
        s.push_str(&row("smoothed", &self.smoothed));
        s.push_str(&format!("overhead  {:+.2}%\n", self.overhead * 100.0));
        match self.peak_rss_bytes {
            Some(b) => s.push_str(&format!(
                "peak RSS  {:.1} MiB ({})\n",
                b as f64 / (1024.0 * 1024.0),
                self.peak_memory_method
            )),
            None => s.push_str(&format!("peak RSS  n/a ({})\n", self.peak_memory_method)),
        }
        s
    }
}

/// Peak resident set size of this process (`VmHWM`), where available.
pub fn peak_rss() -> (Option<u64>, &'static str) {
    let Ok(status) = std::fs::read_to_string("/proc/self/status") else {
        return (None, "unavailable on this platform");
    };
    let kb = status
        .lines()
        .find_map(|l| l.strip_prefix("VmHWM:"))
        .and_then(|v| v.trim().trim_end_matches("kB").trim().parse::<u64>().ok());
    (kb.map(|k| k * 1024), "VmHWM from /proc/self/status")
}

fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// One pass over every prompt; returns (seconds, generated tokens).
pub fn timed_pass(
    config: &RunConfig,
    weights: &Weights,
    prompts: &[Prompt],
    smoother: Option<&SmootherConfig>,
) -> Result<(f64, usize)> {
    let options = config.decode_options();
    let n = weights.config.num_layers;
    let mut tokens = 0;
    let start = Instant::now();
    for p in prompts {
        let mut sm = smoother
            .map(|c| AdaptiveSmoother::new(c.clone(), n))
            .transpose()?;
        let g = greedy_decode(
            weights,
            &p.tokens,
            &options,
            sm.as_mut().map(|s| s as &mut dyn StepInterceptor),
            None,
        )?;
        tokens += g.tokens.generated.len();
    }
    Ok((start.elapsed().as_secs_f64(), tokens))
}

fn summarise(mut runs: Vec<(f64, usize)>, prompts: usize) -> ArmStats {
    let tokens = runs[0].1;
    let mut ms: Vec<f64> = runs.iter().map(|(s, t)| s * 1e3 / (*t).max(1) as f64).collect();
    let mut tps: Vec<f64> = runs.iter().map(|(s, t)| *t as f64 / s.max(1e-12)).collect();
    let mut spc: Vec<f64> = runs.iter_mut().map(|(s, _)| *s / prompts as f64).collect();
    ArmStats {
        ms_per_token_min: ms.iter().copied().fold(f64::INFINITY, f64::min),
        ms_per_token_max: ms.iter().copied().fold(0.0, f64::max),
        ms_per_token_median: median(&mut ms),
        tokens_per_s_median: median(&mut tps),
        s_per_caption_median: median(&mut spc),
        tokens,
    }
}

/// Baseline and smoothed passes interleaved `repetitions` times on the same
/// prompts, with no recorder attached.
pub fn bench_with(
    config: &RunConfig,
    weights: &Weights,
    prompts: &[Prompt],
    repetitions: usize,
) -> Result<BenchReport> {
    if repetitions < 3 {
        return Err(Error::Config(format!("repetitions must be >= 3, got {repetitions}")));
    }
    if prompts.is_empty() {
        return Err(Error::NoWork("prompt file is empty".into()));
    }
    let smoother = config
        .smoother
        .clone()
        .ok_or_else(|| Error::Config("bench needs a smoother section".into()))?;
    smoother.validate(weights.config.num_layers)?;

    // Warm-up.
    timed_pass(config, weights, &prompts[..1], None)?;
    let mut base = Vec::with_capacity(repetitions);
    let mut smooth = Vec::with_capacity(repetitions);
    for _ in 0..repetitions {
        base.push(timed_pass(config, weights, prompts, None)?);
        smooth.push(timed_pass(config, weights, prompts, Some(&smoother))?);
    }
    let baseline = summarise(base, prompts.len());
    let smoothed = summarise(smooth, prompts.len());
    let overhead = smoothed.ms_per_token_median / baseline.ms_per_token_median - 1.0;
    let (peak_rss_bytes, method) = peak_rss();
    Ok(BenchReport {
        schema_version: 1,
        repetitions,
        prompts: prompts.len(),
        baseline,
        smoothed,
        overhead,
        peak_rss_bytes,
        peak_memory_method: method.to_string(),
    })
}

pub fn cmd_bench(config: &RunConfig, repetitions: usize) -> Result<BenchReport> {
    let weights = config.load_weights()?;
    let vocab = config.load_vocab()?;
    let prompts = config.load_prompts(vocab.as_ref())?;
    bench_with(config, &weights, &prompts, repetitions)
}

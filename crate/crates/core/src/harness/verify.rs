// SPDX-License-Identifier: MIT OR Apache-2.0

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::decoder::{
    greedy_decode, init_random, DecodeOptions, KvCache, LayerStep, ModelConfig, StepInterceptor,
    StepObservation, StepRecorder, Weights,
};
use crate::error::Result;
use crate::smoother::{
    map_oracle, smooth_cache_tail, AdaptiveSmoother, EntropyQueue, MapOracleInputs, SmoothMode,
    SmoothTarget, SmootherConfig,
};

/// Outcome of one property suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
    pub seed: u64,
    pub elapsed_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub schema_version: u32,
    pub suites: Vec<SuiteResult>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.suites.iter().all(|s| s.passed)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for r in &self.suites {
            s.push_str(&format!(
                "{:<22} {}  {:>9.1} ms  seed={}  {}\n",
                r.name,
                if r.passed { "PASS" } else { "FAIL" },
                r.elapsed_ms,
                r.seed,
                r.detail
            ));
        }
        s
    }
}

fn timed(name: &str, seed: u64, f: impl FnOnce() -> std::result::Result<String, String>) -> SuiteResult {
    let start = Instant::now();
    let out = f();
    let elapsed_ms = start.elapsed().as_secs_f64() * 1e3;
    let (passed, detail) = match out {
        Ok(d) => (true, d),
        Err(d) => (false, d),
    };
    SuiteResult {
        name: name.to_string(),
        passed,
        detail,
        seed,
        elapsed_ms,
    }
}

/// Numeric MAP maximiser vs the closed-form EMA over `draws` random inputs.
pub fn suite_map_oracle(seed: u64, draws: usize, tol: f64) -> SuiteResult {
    timed("map_oracle", seed, || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst = 0.0f64;
        for i in 0..draws {
            let inp = MapOracleInputs {
                observation: rng.random_range(-10.0..10.0),
                previous: rng.random_range(-10.0..10.0),
                obs_variance: rng.random_range(0.01..10.0),
                prior_variance: rng.random_range(0.01..10.0),
            };
            let est = map_oracle(&inp).map_err(|e| format!("draw {i}: {e}"))?;
            let dev = est.deviation();
            if dev > tol {
                return Err(format!("draw {i}: deviation {dev:.3e} > {tol:.0e} for {inp:?}"));
            }
            worst = worst.max(dev);
        }
        Ok(format!("{draws} draws, max deviation {worst:.3e}"))
    })
}

/// Signature of a push-and-rank implementation under test.
pub type RankFn = fn(&mut EntropyQueue, usize, f64) -> usize;

fn queue_rank(q: &mut EntropyQueue, layer: usize, z: f64) -> usize {
    q.push_and_rank(layer, z)
}

/// Rank of every push against a pairwise brute force over the window of
/// the last `capacity` pushes.
pub fn suite_rank_with(seed: u64, queues: usize, capacity: usize, rank: RankFn) -> SuiteResult {
    timed("rank_brute_force", seed, || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for qi in 0..queues {
            let pushes = rng.random_range(1..=3 * capacity);
            let mut q = EntropyQueue::new(1, capacity);
            let mut history: Vec<f64> = Vec::with_capacity(pushes);
            for _ in 0..pushes {
                // Coarse grid so ties occur.
                let z = f64::from(rng.random_range(0u32..20)) * 0.25;
                history.push(z);
                let got = rank(&mut q, 0, z);
                let window = &history[history.len().saturating_sub(capacity)..];
                let ranks: Vec<usize> = window
                    .iter()
                    .map(|a| window.iter().filter(|b| *b < a).count())
                    .collect();
                let expected = ranks[ranks.len() - 1];
                if got != expected {
                    return Err(format!(
                        "queue {qi}: rank {got} != brute force {expected} for window {window:?}"
                    ));
                }
            }
        }
        Ok(format!("{queues} queues, M={capacity}"))
    })
}

pub fn suite_rank(seed: u64, queues: usize, capacity: usize) -> SuiteResult {
    suite_rank_with(seed, queues, capacity, queue_rank)
}

/// After `n` pushes the queue holds exactly the last `min(n, M)` values in order.
pub fn suite_fifo(seed: u64, trials: usize, capacity: usize) -> SuiteResult {
    timed("fifo_eviction", seed, || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for t in 0..trials {
            let n = rng.random_range(0..=4 * capacity);
            let mut q = EntropyQueue::new(2, capacity);
            let pushed: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            for &z in &pushed {
                q.push_and_rank(1, z);
            }
            let tail = &pushed[n.saturating_sub(capacity)..];
            let got: Vec<f64> = q.contents(1).collect();
            if got != tail || !q.is_empty(0) {
                return Err(format!("trial {t}: {n} pushes left {got:?}, expected {tail:?}"));
            }
        }
        Ok(format!("{trials} trials, M={capacity}"))
    })
}

/// Recursive smoothing of a scalar cache vs the unrolled weighted sum
/// `(1-λ) Σ_j λ^{t-j} x_j + λ^t x_0`.
pub fn suite_ema_closed_form(seed: u64, trials: usize, steps: usize, tol: f64) -> SuiteResult {
    timed("ema_closed_form", seed, || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst = 0.0f64;
        for &lambda in &[0.3, 0.5, 0.9] {
            for trial in 0..trials {
                let xs: Vec<f64> = (0..steps).map(|_| rng.random_range(-1.0..1.0)).collect();
                let mut cache = KvCache::new(1, 1, 1);
                for (t, &x) in xs.iter().enumerate() {
                    let v = [x as f32];
                    cache
                        .append_position(&[&v], &[&v])
                        .map_err(|e| e.to_string())?;
                    smooth_cache_tail(&mut cache, 0, t, lambda, SmoothTarget::KeyValue)
                        .map_err(|e| e.to_string())?;
                }
                let layer = cache.layer(0);
                for t in 0..steps {
                    let mut oracle = lambda.powi(t as i32) * f64::from(xs[0] as f32);
                    for j in 1..=t {
                        oracle += (1.0 - lambda) * lambda.powi((t - j) as i32) * f64::from(xs[j] as f32);
                    }
                    for got in [layer.key_row(t)[0], layer.value_row(t)[0]] {
                        let dev = (f64::from(got) - oracle).abs();
                        if dev > tol {
                            return Err(format!(
                                "λ={lambda} trial {trial} step {t}: {got} vs {oracle} (dev {dev:.3e})"
                            ));
                        }
                        worst = worst.max(dev);
                    }
                }
            }
        }
        Ok(format!("{trials} trials × 3 λ, max deviation {worst:.3e}"))
    })
}

#[derive(Default)]
struct LogitTape(Vec<Vec<f32>>);

impl StepRecorder for LogitTape {
    fn on_step(&mut self, obs: &StepObservation<'_>) {
        self.0.push(obs.logits.to_vec());
    }
}

fn verify_model(seed: u64) -> Result<Weights> {
    init_random(&ModelConfig::toy(seed))
}

fn random_prompt(rng: &mut ChaCha8Rng, vocab: usize) -> Vec<u32> {
    let len = rng.random_range(4..12);
    (0..len).map(|_| rng.random_range(0..vocab as u32)).collect()
}

/// Maximum relative L2 difference between two logit vectors.
pub fn relative_logit_diff(a: &[f32], b: &[f32]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (x, y) in a.iter().zip(b) {
        num += (f64::from(*x) - f64::from(*y)).powi(2);
        den += f64::from(*y).powi(2);
    }
    num.sqrt() / den.sqrt().max(f64::MIN_POSITIVE)
}

/// `Fixed(0)` smoothing reproduces interceptor-free decoding.
pub fn suite_lambda_zero(seeds: &[u64], prompts: usize, new_tokens: usize, tol: f64) -> SuiteResult {
    let seed = seeds.first().copied().unwrap_or(0);
    timed("lambda_zero_identity", seed, || {
        let mut worst = 0.0f64;
        for &s in seeds {
            let w = verify_model(s).map_err(|e| e.to_string())?;
            let n = w.config.num_layers;
            let mut rng = ChaCha8Rng::seed_from_u64(s ^ 0x5eed);
            let opts = DecodeOptions::new(new_tokens);
            for p in 0..prompts {
                let prompt = random_prompt(&mut rng, w.config.vocab_size);
                let mut base_tape = LogitTape::default();
                let base = greedy_decode(&w, &prompt, &opts, None, Some(&mut base_tape))
                    .map_err(|e| e.to_string())?;
                let cfg = SmootherConfig::default()
                    .with_layers(0, n - 1)
                    .with_mode(SmoothMode::Fixed(0.0));
                let mut sm = AdaptiveSmoother::new(cfg, n).map_err(|e| e.to_string())?;
                let mut tape = LogitTape::default();
                let got = greedy_decode(&w, &prompt, &opts, Some(&mut sm), Some(&mut tape))
                    .map_err(|e| e.to_string())?;
                if got.tokens != base.tokens {
                    return Err(format!("seed {s} prompt {p}: token sequences differ"));
                }
                for (a, b) in tape.0.iter().zip(&base_tape.0) {
                    let d = relative_logit_diff(a, b);
                    if d > tol {
                        return Err(format!("seed {s} prompt {p}: logit diff {d:.3e}"));
                    }
                    worst = worst.max(d);
                }
            }
        }
        Ok(format!(
            "{} models × {prompts} prompts, max relative logit diff {worst:.3e}",
            seeds.len()
        ))
    })
}

/// Wraps a smoother and checks `‖K̂_t − K̂_{t−1}‖ = (1 − λ̃)‖K_t − K̂_{t−1}‖`
/// on every step it smooths.
pub struct ContractionProbe {
    pub inner: AdaptiveSmoother,
    pub checked: usize,
    pub worst: f64,
    pub violation: Option<String>,
    pub tol: f64,
}

impl ContractionProbe {
    pub fn new(inner: AdaptiveSmoother, tol: f64) -> Self {
        Self {
            inner,
            checked: 0,
            worst: 0.0,
            violation: None,
            tol,
        }
    }
}

fn l2(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (f64::from(*x) - f64::from(*y)).powi(2))
        .sum::<f64>()
        .sqrt()
}

impl StepInterceptor for ContractionProbe {
    fn intercept(&mut self, mut step: LayerStep<'_>) {
        let pos = step.position;
        let raw = step.cache.key_row(pos).to_vec();
        let prev = (pos > 0).then(|| step.cache.key_row(pos - 1).to_vec());
        let before = self.inner.decisions().len();
        self.inner.intercept(LayerStep {
            layer: step.layer,
            position: pos,
            attention: step.attention,
            cache: step.cache.reborrow(),
            attn_output: step.attn_output.as_deref_mut(),
        });
        let (Some(d), Some(prev)) = (self.inner.decisions().get(before), prev) else {
            return;
        };
        if !d.applied {
            return;
        }
        let lhs = l2(step.cache.key_row(pos), &prev);
        let rhs = (1.0 - d.lambda_tilde) * l2(&raw, &prev);
        let dev = (lhs - rhs).abs();
        self.checked += 1;
        self.worst = self.worst.max(dev);
        if dev > self.tol && self.violation.is_none() {
            self.violation = Some(format!(
                "layer {} position {pos}: {lhs} vs {rhs} (λ̃={})",
                step.layer, d.lambda_tilde
            ));
        }
    }
}

/// Contraction identity on every smoothed step of one generation.
pub fn suite_contraction(seed: u64, new_tokens: usize, tol: f64) -> SuiteResult {
    timed("contraction", seed, || {
        let w = verify_model(seed).map_err(|e| e.to_string())?;
        let n = w.config.num_layers;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xc0de);
        let prompt = random_prompt(&mut rng, w.config.vocab_size);
        let cfg = SmootherConfig::default().with_layers(0, n - 1);
        let sm = AdaptiveSmoother::new(cfg, n).map_err(|e| e.to_string())?;
        let mut probe = ContractionProbe::new(sm, tol);
        greedy_decode(&w, &prompt, &DecodeOptions::new(new_tokens), Some(&mut probe), None)
            .map_err(|e| e.to_string())?;
        if let Some(v) = probe.violation {
            return Err(v);
        }
        if probe.checked == 0 {
            return Err("no smoothed steps were checked".into());
        }
        Ok(format!("{} smoothed steps, max deviation {:.3e}", probe.checked, probe.worst))
    })
}

/// Every suite with its default size.
pub fn cmd_verify(seed: u64) -> VerifyReport {
    VerifyReport {
        schema_version: 1,
        suites: vec![
            suite_map_oracle(seed, 1000, 1e-6),
            suite_rank(seed, 10_000, 15),
            suite_fifo(seed, 1000, 15),
            suite_ema_closed_form(seed, 100, 64, 1e-5),
            suite_lambda_zero(&[seed, seed + 1, seed + 2], 10, 32, 1e-6),
            suite_contraction(seed, 64, 1e-6),
        ],
    }
}

// SPDX-License-Identifier: MIT OR Apache-2.0

use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::eval::{records_to_captions, EvalContext};
use super::generate::{run_prompts, GenerationRecord};
use crate::error::{Error, Result};
use crate::smoother::{SmoothMode, SmootherConfig};

/// Version of the sweep CSV layout.
pub const SWEEP_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// In fixed mode the value is the fixed coefficient.
    LambdaRef(Vec<f64>),
    LayerStart(Vec<usize>),
    LayerEnd(Vec<usize>),
}

impl SweepAxis {
    pub fn len(&self) -> usize {
        match self {
            Self::LambdaRef(v) => v.len(),
            Self::LayerStart(v) | Self::LayerEnd(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn value(&self, i: usize) -> f64 {
        match self {
            Self::LambdaRef(v) => v[i],
            Self::LayerStart(v) | Self::LayerEnd(v) => v[i] as f64,
        }
    }

    fn apply(&self, i: usize, base: &SmootherConfig) -> SmootherConfig {
        let mut c = base.clone();
        match self {
            Self::LambdaRef(v) => match c.mode {
                SmoothMode::Fixed(_) => c.mode = SmoothMode::Fixed(v[i]),
                SmoothMode::Adaptive => c.lambda_ref = v[i],
            },
            Self::LayerStart(v) => c.layer_start = v[i],
            Self::LayerEnd(v) => c.layer_end = v[i],
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis_value: f64,
    pub chair_s: Option<f64>,
    pub chair_i: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub mean_lambda_tilde: Option<f64>,
    pub tokens_per_s: Option<f64>,
    pub status: String,
    pub schema_version: u32,
}

impl SweepRow {
    fn failed(axis_value: f64, err: &Error) -> Self {
        Self {
            axis_value,
            chair_s: None,
            chair_i: None,
            precision: None,
            recall: None,
            f1: None,
            mean_lambda_tilde: None,
            tokens_per_s: None,
            status: format!("failed: {err}"),
            schema_version: SWEEP_SCHEMA_VERSION,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub rows: Vec<SweepRow>,
    /// Records of every completed sub-run, by axis position.
    pub records: Vec<Vec<GenerationRecord>>,
}

/// Mean `λ̃` over every smoothed `(layer, step)`; 0 when nothing was smoothed.
pub fn mean_lambda_tilde(records: &[GenerationRecord]) -> f64 {
    let (sum, n) = records
        .iter()
        .flat_map(GenerationRecord::decisions)
        .fold((0.0, 0usize), |(s, n), (_, t, _)| (s + t, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Runs `base` once per axis value, scoring each run with CHAIR. Rows are
/// written to `csv_out` as they complete. A failing sub-run appends a
/// `failed: ...` row and aborts, leaving the partial CSV in place.
pub fn cmd_sweep<W: Write>(
    base: &RunConfig,
    axis: &SweepAxis,
    csv_out: W,
) -> Result<SweepOutcome> {
    if axis.is_empty() {
        return Err(Error::Config("sweep axis has no values".into()));
    }
    let smoother = base
        .smoother
        .clone()
        .ok_or_else(|| Error::Config("sweep needs a smoother section".into()))?;
    let eval = base
        .eval
        .as_ref()
        .ok_or_else(|| Error::Config("sweep needs an eval section".into()))?;
    let ctx = EvalContext::load(eval)?;
    let weights = base.load_weights()?;
    let vocab = base.load_vocab()?;
    let vocab = vocab.ok_or_else(|| Error::Config("sweep needs prompts.vocab to decode captions".into()))?;
    let prompts = base.load_prompts(Some(&vocab))?;

    let mut writer = csv::Writer::from_writer(csv_out);
    let mut outcome = SweepOutcome {
        rows: Vec::new(),
        records: Vec::new(),
    };
    for i in 0..axis.len() {
        let value = axis.value(i);
        let mut cfg = base.clone();
        cfg.smoother = Some(axis.apply(i, &smoother));
        let result = (|| {
            let start = Instant::now();
            let runs = run_prompts(&cfg, &weights, Some(&vocab), &prompts, cfg.threads)?;
            let secs = start.elapsed().as_secs_f64();
            let records: Vec<_> = runs.into_iter().map(|r| r.record).collect();
            let tokens: usize = records.iter().map(|r| r.generated.len()).sum();
            let captions = records_to_captions(&records, Some(&vocab))?;
            let report = ctx.evaluate(&captions)?;
            let row = SweepRow {
                axis_value: value,
                chair_s: Some(report.chair.chair_s),
                chair_i: Some(report.chair.chair_i),
                precision: Some(report.chair.precision),
                recall: Some(report.chair.recall),
                f1: Some(report.chair.f1),
                mean_lambda_tilde: Some(mean_lambda_tilde(&records)),
                tokens_per_s: Some(tokens as f64 / secs.max(1e-9)),
                status: "ok".into(),
                schema_version: SWEEP_SCHEMA_VERSION,
            };
            Ok::<_, Error>((row, records))
        })();
        match result {
            Ok((row, records)) => {
                writer.serialize(&row)?;
                writer.flush().map_err(|e| Error::io("<csv>", e))?;
                outcome.rows.push(row);
                outcome.records.push(records);
            }
            Err(e) => {
                writer.serialize(SweepRow::failed(value, &e))?;
                writer.flush().map_err(|e| Error::io("<csv>", e))?;
                return Err(e);
            }
        }
    }
    Ok(outcome)
}

// SPDX-License-Identifier: MIT OR Apache-2.0

//! Generation traces and the offline analyses computed over them:
//! cumulative-stage logit statistics per object group, row-entropy vs
//! column-sum similarity, and entropy/ranking coupling.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::decoder::{AttentionSnapshot, LayerAttention, StepObservation, StepRecorder};
use crate::error::{Error, Result};
use crate::numerics::{cosine, DEFAULT_ENTROPY_EPS};
use crate::smoother::{row_entropy, SmoothDecision};

/// Version of the analysis CSV layout.
pub const ANALYSIS_SCHEMA_VERSION: u32 = 1;

/// z-score of a two-sided 95% normal interval.
const Z95: f64 = 1.96;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TraceConfig {
    /// Vocabulary ids whose logits are recorded every step.
    #[serde(default)]
    pub tracked_ids: Vec<u32>,
    /// Keep every layer's full causal attention matrix (`O(L²·H)` memory).
    #[serde(default)]
    pub retain_history: bool,
    /// Keep the full logit vector of every step.
    #[serde(default)]
    pub keep_logits: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub step: usize,
    pub position: usize,
    pub input_token: u32,
    pub output_token: u32,
    /// Head-averaged row-entropy per layer.
    pub z: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub decisions: Vec<SmoothDecision>,
    pub tracked_logits: Vec<f32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logits: Option<Vec<f32>>,
}

/// Causal attention rows of every layer, indexed `[layer][position]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionHistory {
    pub layers: Vec<Vec<LayerAttention>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub tracked_ids: Vec<u32>,
    pub steps: Vec<TraceStep>,
    pub history: Option<AttentionHistory>,
}

impl TraceRecord {
    /// Row-entropy series of `layer` across steps.
    pub fn entropy_series(&self, layer: usize) -> Result<Vec<f64>> {
        self.steps
            .iter()
            .map(|s| {
                s.z.get(layer).copied().ok_or(Error::LayerOutOfRange {
                    layer,
                    num_layers: s.z.len(),
                })
            })
            .collect()
    }

    /// Logit series of one tracked id across steps.
    pub fn tracked_series(&self, id: u32) -> Option<Vec<f64>> {
        let idx = self.tracked_ids.iter().position(|&t| t == id)?;
        Some(
            self.steps
                .iter()
                .map(|s| f64::from(s.tracked_logits[idx]))
                .collect(),
        )
    }
}

/// [`StepRecorder`] that builds a [`TraceRecord`].
#[derive(Debug)]
pub struct TraceRecorder {
    config: TraceConfig,
    num_heads: usize,
    eps: f64,
    steps: Vec<TraceStep>,
    history: Option<Vec<Vec<LayerAttention>>>,
}

impl TraceRecorder {
    pub fn new(config: TraceConfig, num_layers: usize, num_heads: usize) -> Self {
        let history = config
            .retain_history
            .then(|| (0..num_layers).map(|_| Vec::new()).collect());
        Self {
            config,
            num_heads,
            eps: DEFAULT_ENTROPY_EPS,
            steps: Vec::new(),
            history,
        }
    }

    pub fn with_eps(mut self, eps: f64) -> Self {
        self.eps = eps;
        self
    }

    fn retain(&mut self, attention: &AttentionSnapshot) {
        if let Some(h) = self.history.as_mut() {
            for (layer, la) in h.iter_mut().zip(&attention.layers) {
                layer.push(la.clone());
            }
        }
    }

    /// Finishes the trace, attaching each decision to the step whose input
    /// position it smoothed.
    pub fn finish(self, decisions: &[SmoothDecision]) -> TraceRecord {
        let mut steps = self.steps;
        if let Some(first) = steps.first() {
            let base = first.position;
            for d in decisions {
                if let Some(s) = d.position.checked_sub(base).and_then(|i| steps.get_mut(i)) {
                    s.decisions.push(d.clone());
                }
            }
        }
        TraceRecord {
            tracked_ids: self.config.tracked_ids,
            steps,
            history: self.history.map(|layers| AttentionHistory { layers }),
        }
    }
}

impl StepRecorder for TraceRecorder {
    fn on_prefill(&mut self, _position: usize, attention: &AttentionSnapshot) {
        self.retain(attention);
    }

    fn on_step(&mut self, obs: &StepObservation<'_>) {
        self.retain(obs.attention);
        let z = obs
            .attention
            .layers
            .iter()
            .map(|la| row_entropy(la, self.num_heads, self.eps).unwrap_or(f64::NAN))
            .collect();
        let tracked_logits = self
            .config
            .tracked_ids
            .iter()
            .map(|&id| obs.logits.get(id as usize).copied().unwrap_or(f32::NAN))
            .collect();
        self.steps.push(TraceStep {
            step: obs.step,
            position: obs.position,
            input_token: obs.input_token,
            output_token: obs.output_token,
            z,
            decisions: Vec::new(),
            tracked_logits,
            logits: self.config.keep_logits.then(|| obs.logits.to_vec()),
        });
    }
}

/// Head-averaged attention each position receives from strictly later
/// queries: `score_j = (1/H) Σ_h Σ_{t>j} α_{t,j}`.
pub fn column_sums(rows: &[LayerAttention]) -> Result<Vec<f64>> {
    let n = rows.len();
    let mut scores = vec![0.0; n];
    for (t, la) in rows.iter().enumerate() {
        if la.heads.is_empty() {
            return Err(Error::MissingHeads {
                expected: 1,
                found: 0,
            });
        }
        let h = la.heads.len() as f64;
        for row in &la.heads {
            if row.len() != t + 1 {
                return Err(Error::LengthMismatch {
                    left: row.len(),
                    right: t + 1,
                });
            }
            for (j, &a) in row.iter().enumerate().take(t) {
                scores[j] += a / h;
            }
        }
    }
    Ok(scores)
}

/// Cosine between each generated step's row-entropy and the column-sum of
/// the same position.
pub fn entropy_columnsum_similarity(trace: &TraceRecord, layer: usize) -> Result<f64> {
    let history = trace
        .history
        .as_ref()
        .and_then(|h| h.layers.get(layer))
        .ok_or(Error::HistoryNotRetained { layer })?;
    let sums = column_sums(history)?;
    let entropy = trace.entropy_series(layer)?;
    let colsum: Vec<f64> = trace
        .steps
        .iter()
        .map(|s| {
            sums.get(s.position).copied().ok_or(Error::LengthMismatch {
                left: sums.len(),
                right: s.position + 1,
            })
        })
        .collect::<Result<_>>()?;
    cosine(&entropy, &colsum)
}

/// Object groups used for logit-trajectory statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ObjectGroupLabel {
    /// In the image and mentioned in the caption.
    #[serde(rename = "GT-InCap")]
    GtInCap,
    /// In the image, not mentioned.
    #[serde(rename = "GT-OutCap")]
    GtOutCap,
    /// Mentioned but not in the image.
    #[serde(rename = "Hallucinated")]
    Hallucinated,
}

impl fmt::Display for ObjectGroupLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::GtInCap => "GT-InCap",
            Self::GtOutCap => "GT-OutCap",
            Self::Hallucinated => "Hallucinated",
        })
    }
}

impl ObjectGroupLabel {
    /// Label from ground-truth and caption membership; `None` for objects in
    /// neither.
    pub fn classify(in_ground_truth: bool, in_caption: bool) -> Option<Self> {
        match (in_ground_truth, in_caption) {
            (true, true) => Some(Self::GtInCap),
            (true, false) => Some(Self::GtOutCap),
            (false, true) => Some(Self::Hallucinated),
            (false, false) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageStats {
    /// 1-based.
    pub stage: usize,
    /// Number of leading steps included.
    pub tokens: usize,
    /// Number of samples (`tokens × ids`).
    pub n: usize,
    pub mean: f64,
    /// Unbiased sample variance; zero for a single sample.
    pub variance: f64,
    pub ci_half_width: f64,
}

/// Number of leading steps covered by stage `s` (1-based) of `stages`.
pub fn stage_prefix_len(s: usize, total: usize, stages: usize) -> usize {
    (s * total).div_ceil(stages)
}

/// Cumulative-prefix statistics for a set of aligned series: stage `s`
/// pools every series over steps `0..ceil(s·T/S)`.
pub fn stage_statistics_series(series: &[Vec<f64>], stages: usize) -> Result<Vec<StageStats>> {
    let total = series.first().map_or(0, Vec::len);
    if series.is_empty() || total == 0 || stages == 0 {
        return Err(Error::EmptyInput);
    }
    if let Some(bad) = series.iter().find(|s| s.len() != total) {
        return Err(Error::LengthMismatch {
            left: bad.len(),
            right: total,
        });
    }
    // Running sums over the prefix keep this O(T·ids).
    let mut out = Vec::with_capacity(stages);
    let (mut sum, mut sum_sq, mut covered) = (0.0, 0.0, 0);
    for s in 1..=stages {
        let upto = stage_prefix_len(s, total, stages);
        for t in covered..upto {
            for x in series {
                sum += x[t];
                sum_sq += x[t] * x[t];
            }
        }
        covered = upto;
        let n = upto * series.len();
        let nf = n as f64;
        let mean = sum / nf;
        let variance = if n > 1 {
            ((sum_sq - nf * mean * mean) / (nf - 1.0)).max(0.0)
        } else {
            0.0
        };
        out.push(StageStats {
            stage: s,
            tokens: upto,
            n,
            mean,
            variance,
            ci_half_width: Z95 * variance.sqrt() / nf.sqrt(),
        });
    }
    Ok(out)
}

/// [`stage_statistics_series`] for each group of tracked ids.
pub fn stage_statistics(
    trace: &TraceRecord,
    groups: &BTreeMap<ObjectGroupLabel, Vec<u32>>,
    stages: usize,
) -> Result<BTreeMap<ObjectGroupLabel, Vec<StageStats>>> {
    let mut out = BTreeMap::new();
    for (label, ids) in groups {
        if ids.is_empty() {
            return Err(Error::EmptyGroup(label.to_string()));
        }
        let series = ids
            .iter()
            .map(|&id| {
                trace
                    .tracked_series(id)
                    .ok_or_else(|| Error::EmptyGroup(format!("{label}: id {id} not tracked")))
            })
            .collect::<Result<Vec<_>>>()?;
        out.insert(*label, stage_statistics_series(&series, stages)?);
    }
    Ok(out)
}

/// Cosine between the layer's per-step row-entropy and a caller-supplied
/// ranking-score series, per group.
pub fn entropy_ranking_coupling(
    trace: &TraceRecord,
    layer: usize,
    ranking: &BTreeMap<ObjectGroupLabel, Vec<f64>>,
) -> Result<BTreeMap<ObjectGroupLabel, f64>> {
    let entropy = trace.entropy_series(layer)?;
    ranking
        .iter()
        .map(|(label, series)| Ok((*label, cosine(&entropy, series)?)))
        .collect()
}

/// One line of analysis CSV output. Keys that do not apply stay empty.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AnalysisRow {
    pub schema_version: u32,
    pub analysis: String,
    pub layer: Option<usize>,
    pub group: Option<String>,
    pub stage: Option<usize>,
    pub n: Option<usize>,
    pub mean: Option<f64>,
    pub variance: Option<f64>,
    pub ci_half_width: Option<f64>,
    pub value: Option<f64>,
}

impl AnalysisRow {
    pub fn scalar(analysis: &str, layer: Option<usize>, group: Option<String>, value: f64) -> Self {
        Self {
            schema_version: ANALYSIS_SCHEMA_VERSION,
            analysis: analysis.to_string(),
            layer,
            group,
            value: Some(value),
            ..Self::default()
        }
    }

    pub fn stages(group: ObjectGroupLabel, stats: &[StageStats]) -> Vec<Self> {
        stats
            .iter()
            .map(|s| Self {
                schema_version: ANALYSIS_SCHEMA_VERSION,
                analysis: "stage_statistics".into(),
                group: Some(group.to_string()),
                stage: Some(s.stage),
                n: Some(s.n),
                mean: Some(s.mean),
                variance: Some(s.variance),
                ci_half_width: Some(s.ci_half_width),
                ..Self::default()
            })
            .collect()
    }
}

/// Writes rows as CSV with a header line.
pub fn write_analysis_csv<W: Write>(out: W, rows: &[AnalysisRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn causal_uniform(t: usize) -> Vec<LayerAttention> {
        (0..t)
            .map(|i| LayerAttention {
                heads: vec![vec![1.0 / (i + 1) as f64; i + 1]],
            })
            .collect()
    }

    #[test]
    fn column_sums_uniform() {
        let s = column_sums(&causal_uniform(3)).unwrap();
        assert_abs_diff_eq!(s[0], 0.5 + 1.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s[1], 1.0 / 3.0, epsilon = 1e-12);
        assert_eq!(s[2], 0.0);
    }

    #[test]
    fn column_sums_single_and_concentrated() {
        assert_eq!(column_sums(&causal_uniform(1)).unwrap(), vec![0.0]);
        let t = 6;
        let rows: Vec<_> = (0..t)
            .map(|i| {
                let mut r = vec![0.0; i + 1];
                r[0] = 1.0;
                LayerAttention { heads: vec![r] }
            })
            .collect();
        let s = column_sums(&rows).unwrap();
        assert_eq!(s[0], (t - 1) as f64);
        assert!(s[1..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn column_sums_rejects_non_causal() {
        let rows = vec![LayerAttention {
            heads: vec![vec![0.5, 0.5]],
        }];
        assert!(column_sums(&rows).is_err());
    }

    fn trace_with(z: &[f64], history: Option<Vec<LayerAttention>>) -> TraceRecord {
        TraceRecord {
            tracked_ids: vec![],
            steps: z
                .iter()
                .enumerate()
                .map(|(i, &z)| TraceStep {
                    step: i,
                    position: i,
                    input_token: 0,
                    output_token: 0,
                    z: vec![z],
                    decisions: vec![],
                    tracked_logits: vec![],
                    logits: None,
                })
                .collect(),
            history: history.map(|h| AttentionHistory { layers: vec![h] }),
        }
    }

    #[test]
    fn similarity_on_hand_fixture() {
        // 4 positions, one head, rows chosen by hand.
        let rows = vec![
            vec![1.0],
            vec![0.5, 0.5],
            vec![0.6, 0.2, 0.2],
            vec![0.4, 0.3, 0.2, 0.1],
        ];
        let history: Vec<_> = rows
            .iter()
            .map(|r| LayerAttention {
                heads: vec![r.clone()],
            })
            .collect();
        // Column sums: [0.5+0.6+0.4, 0.2+0.3, 0.2, 0] = [1.5, 0.5, 0.2, 0].
        let z = [0.1, 0.7, 0.9, 1.2];
        let trace = trace_with(&z, Some(history));
        let got = entropy_columnsum_similarity(&trace, 0).unwrap();
        let dot = 0.1 * 1.5 + 0.7 * 0.5 + 0.9 * 0.2;
        let nz = (0.01f64 + 0.49 + 0.81 + 1.44).sqrt();
        let nc = (2.25f64 + 0.25 + 0.04).sqrt();
        assert_abs_diff_eq!(got, dot / (nz * nc), epsilon = 1e-12);
    }

    #[test]
    fn similarity_requires_history() {
        let trace = trace_with(&[1.0, 2.0], None);
        assert!(matches!(
            entropy_columnsum_similarity(&trace, 0),
            Err(Error::HistoryNotRetained { layer: 0 })
        ));
    }

    #[test]
    fn stage_prefixes() {
        let lens: Vec<_> = (1..=20).map(|s| stage_prefix_len(s, 40, 20)).collect();
        assert_eq!(lens, (1..=20).map(|s| 2 * s).collect::<Vec<_>>());
        assert_eq!(stage_prefix_len(1, 7, 20), 1);
        assert_eq!(stage_prefix_len(20, 7, 20), 7);
    }

    #[test]
    fn constant_series_stages() {
        let stats = stage_statistics_series(&[vec![2.5; 40]], 20).unwrap();
        assert_eq!(stats.len(), 20);
        for s in &stats {
            assert_abs_diff_eq!(s.mean, 2.5, epsilon = 1e-12);
            assert_abs_diff_eq!(s.variance, 0.0, epsilon = 1e-12);
        }
        assert!(stats.windows(2).all(|w| w[0].n <= w[1].n));
    }

    #[test]
    fn ramp_stage_means_match_prefix_oracle() {
        let ramp: Vec<f64> = (1..=10).map(f64::from).collect();
        let stats = stage_statistics_series(&[ramp.clone()], 5).unwrap();
        for (s, st) in stats.iter().enumerate() {
            let upto = 2 * (s + 1);
            let prefix = &ramp[..upto];
            let mean = prefix.iter().sum::<f64>() / upto as f64;
            let var = if upto > 1 {
                prefix.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (upto - 1) as f64
            } else {
                0.0
            };
            assert_eq!(st.tokens, upto);
            assert_abs_diff_eq!(st.mean, mean, epsilon = 1e-12);
            assert_abs_diff_eq!(st.variance, var, epsilon = 1e-9);
            assert_abs_diff_eq!(
                st.ci_half_width,
                1.96 * var.sqrt() / (upto as f64).sqrt(),
                epsilon = 1e-9
            );
        }
        assert_eq!(
            stats.iter().map(|s| s.mean).collect::<Vec<_>>(),
            vec![1.5, 2.5, 3.5, 4.5, 5.5]
        );
    }

    #[test]
    fn stage_statistics_groups() {
        let mut trace = trace_with(&[0.0; 4], None);
        trace.tracked_ids = vec![10, 11];
        for (i, s) in trace.steps.iter_mut().enumerate() {
            s.tracked_logits = vec![i as f32, 1.0];
        }
        let mut groups = BTreeMap::new();
        groups.insert(ObjectGroupLabel::GtInCap, vec![10]);
        groups.insert(ObjectGroupLabel::Hallucinated, vec![10, 11]);
        let out = stage_statistics(&trace, &groups, 2).unwrap();
        assert_abs_diff_eq!(out[&ObjectGroupLabel::GtInCap][1].mean, 1.5);
        assert_eq!(out[&ObjectGroupLabel::Hallucinated][1].n, 8);

        groups.insert(ObjectGroupLabel::GtOutCap, vec![]);
        assert!(matches!(
            stage_statistics(&trace, &groups, 2),
            Err(Error::EmptyGroup(_))
        ));
    }

    #[test]
    fn ranking_coupling() {
        let z = [1.0, 2.0, 3.0];
        let trace = trace_with(&z, None);
        let mut ranking = BTreeMap::new();
        ranking.insert(ObjectGroupLabel::GtInCap, z.to_vec());
        ranking.insert(ObjectGroupLabel::Hallucinated, vec![3.0, 2.0, 1.0]);
        let out = entropy_ranking_coupling(&trace, 0, &ranking).unwrap();
        assert_abs_diff_eq!(out[&ObjectGroupLabel::GtInCap], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(out[&ObjectGroupLabel::Hallucinated], 10.0 / 14.0, epsilon = 1e-12);

        let orth = trace_with(&[1.0, 0.0], None);
        let mut r = BTreeMap::new();
        r.insert(ObjectGroupLabel::GtOutCap, vec![0.0, 1.0]);
        assert_eq!(entropy_ranking_coupling(&orth, 0, &r).unwrap()[&ObjectGroupLabel::GtOutCap], 0.0);

        r.insert(ObjectGroupLabel::GtOutCap, vec![0.0]);
        assert!(matches!(
            entropy_ranking_coupling(&orth, 0, &r),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn identical_and_negated_series() {
        let history = causal_uniform(3);
        let sums = column_sums(&history).unwrap();
        let trace = trace_with(&sums, Some(history.clone()));
        assert_abs_diff_eq!(entropy_columnsum_similarity(&trace, 0).unwrap(), 1.0, epsilon = 1e-12);
        let neg: Vec<f64> = sums.iter().map(|v| -v).collect();
        let trace = trace_with(&neg, Some(history));
        assert_abs_diff_eq!(entropy_columnsum_similarity(&trace, 0).unwrap(), -1.0, epsilon = 1e-12);
    }

    #[test]
    fn csv_has_header_and_rows() {
        let rows = vec![AnalysisRow::scalar("similarity", Some(2), None, 0.79)];
        let mut buf = Vec::new();
        write_analysis_csv(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "schema_version,analysis,layer,group,stage,n,mean,variance,ci_half_width,value"
        );
        assert_eq!(lines.next().unwrap(), "1,similarity,2,,,,,,,0.79");
    }
}

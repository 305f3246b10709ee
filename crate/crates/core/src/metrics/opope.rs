// SPDX-License-Identifier: MIT OR Apache-2.0

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::lexicon::{extract_objects, ObjectLexicon};
use super::{Annotations, Caption};
use crate::error::{Error, Result};

/// β used for OPOPE scoring.
pub const DEFAULT_BETA: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    Positive,
    Negative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Random,
    Popular,
    Adversarial,
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Random => "random",
            Self::Popular => "popular",
            Self::Adversarial => "adversarial",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpopeProbe {
    pub image_id: String,
    pub object: String,
    pub polarity: Polarity,
    pub strategy: Strategy,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OpopeScores {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f_beta: f64,
    /// No positive predictions: precision (and F-beta) defined as 0.
    pub degenerate: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OpopeAverage {
    pub accuracy: f64,
    pub precision: f64,
    pub f_beta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpopeReport {
    pub beta: f64,
    pub strategies: BTreeMap<Strategy, OpopeScores>,
    /// Mean over the strategies that have probes.
    pub average: OpopeAverage,
}

/// `F_β = (1 + β²) P R / (β² P + R)` on fractions in `[0, 1]`; 0 when
/// `P = R = 0`.
pub fn fbeta(precision: f64, recall: f64, beta: f64) -> f64 {
    let b2 = beta * beta;
    let den = b2 * precision + recall;
    if den == 0.0 {
        0.0
    } else {
        (1.0 + b2) * precision * recall / den
    }
}

/// Positive probes must name an annotated object, negative probes must not.
pub fn validate_probes(probes: &[OpopeProbe], annotations: &Annotations) -> Result<()> {
    for p in probes {
        let gt = annotations
            .get(&p.image_id)
            .ok_or_else(|| Error::MissingAnnotation(p.image_id.clone()))?;
        let present = gt.contains(&p.object);
        match (p.polarity, present) {
            (Polarity::Positive, false) => {
                return Err(Error::InvalidProbe(format!(
                    "positive probe {:?} not annotated for {}",
                    p.object, p.image_id
                )))
            }
            (Polarity::Negative, true) => {
                return Err(Error::InvalidProbe(format!(
                    "negative probe {:?} is annotated for {}",
                    p.object, p.image_id
                )))
            }
            _ => {}
        }
    }
    Ok(())
}

fn score(tp: usize, fp: usize, tn: usize, fn_: usize, beta: f64) -> OpopeScores {
    let total = tp + fp + tn + fn_;
    let frac = |n: usize, d: usize| if d == 0 { 0.0 } else { n as f64 / d as f64 };
    let p = frac(tp, tp + fp);
    let r = frac(tp, tp + fn_);
    OpopeScores {
        tp,
        fp,
        tn,
        fn_,
        accuracy: 100.0 * frac(tp + tn, total),
        precision: 100.0 * p,
        recall: 100.0 * r,
        f_beta: 100.0 * fbeta(p, r, beta),
        degenerate: tp + fp == 0,
    }
}

/// OPOPE: a probe is predicted "yes" iff its object is extracted from the
/// image's caption(s).
pub fn opope_scores(
    captions: &[Caption],
    probes: &[OpopeProbe],
    lexicon: &ObjectLexicon,
    beta: f64,
) -> Result<OpopeReport> {
    let mut extracted: HashMap<&str, BTreeSet<String>> = HashMap::new();
    for c in captions {
        extracted
            .entry(c.image_id.as_str())
            .or_default()
            .extend(extract_objects(&c.caption, lexicon).objects);
    }
    let mut counts: BTreeMap<Strategy, [usize; 4]> = BTreeMap::new();
    for p in probes {
        if !lexicon.contains(&p.object) {
            return Err(Error::InvalidProbe(format!(
                "object {:?} is not in the lexicon",
                p.object
            )));
        }
        let objects = extracted
            .get(p.image_id.as_str())
            .ok_or_else(|| Error::UncaptionedProbe(p.image_id.clone()))?;
        let yes = objects.contains(&p.object);
        let c = counts.entry(p.strategy).or_default();
        let slot = match (p.polarity, yes) {
            (Polarity::Positive, true) => 0,
            (Polarity::Negative, true) => 1,
            (Polarity::Negative, false) => 2,
            (Polarity::Positive, false) => 3,
        };
        c[slot] += 1;
    }
    let strategies: BTreeMap<_, _> = counts
        .into_iter()
        .map(|(s, [tp, fp, tn, fn_])| (s, score(tp, fp, tn, fn_, beta)))
        .collect();
    let n = strategies.len().max(1) as f64;
    let average = OpopeAverage {
        accuracy: strategies.values().map(|s| s.accuracy).sum::<f64>() / n,
        precision: strategies.values().map(|s| s.precision).sum::<f64>() / n,
        f_beta: strategies.values().map(|s| s.f_beta).sum::<f64>() / n,
    };
    Ok(OpopeReport {
        beta,
        strategies,
        average,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn fbeta_examples() {
        assert_eq!(fbeta(1.0, 1.0, 0.2), 1.0);
        assert_eq!(fbeta(1.0, 0.0, 0.2), 0.0);
        assert_eq!(fbeta(0.0, 0.0, 0.2), 0.0);
        // 1.04 * 0.4 / (0.04 * 0.8 + 0.5) = 0.416 / 0.532
        assert_abs_diff_eq!(fbeta(0.8, 0.5, 0.2), 0.416 / 0.532, epsilon = 1e-12);
        assert_abs_diff_eq!(fbeta(0.8, 0.5, 0.2), 0.781_955, epsilon = 1e-6);
    }

    #[test]
    fn confusion_matrix_fixture() {
        let s = score(2, 1, 0, 1, DEFAULT_BETA);
        assert_eq!(s.accuracy, 50.0);
        assert_abs_diff_eq!(s.precision, 66.67, epsilon = 1e-2);
        assert_abs_diff_eq!(s.f_beta, 100.0 * fbeta(2.0 / 3.0, 2.0 / 3.0, 0.2), epsilon = 1e-12);
        assert_abs_diff_eq!(s.f_beta, 66.67, epsilon = 1e-2);
    }

    #[test]
    fn degenerate_precision() {
        let s = score(0, 0, 3, 0, DEFAULT_BETA);
        assert!(s.degenerate);
        assert_eq!(s.precision, 0.0);
        assert_eq!(s.accuracy, 100.0);
    }

    #[test]
    fn uncaptioned_probe_and_unknown_object() {
        let lex = super::super::chair::tests_support::lexicon();
        let probe = OpopeProbe {
            image_id: "x".into(),
            object: "dog".into(),
            polarity: Polarity::Positive,
            strategy: Strategy::Random,
        };
        assert!(matches!(
            opope_scores(&[], &[probe.clone()], &lex, 0.2),
            Err(Error::UncaptionedProbe(_))
        ));
        let bad = OpopeProbe {
            object: "unicorn".into(),
            ..probe
        };
        assert!(matches!(
            opope_scores(&[], &[bad], &lex, 0.2),
            Err(Error::InvalidProbe(_))
        ));
    }
}

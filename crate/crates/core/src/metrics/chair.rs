// SPDX-License-Identifier: MIT OR Apache-2.0

use serde::{Deserialize, Serialize};

use super::lexicon::{extract_objects, ObjectLexicon};
use super::{Annotations, Caption};
use crate::error::{Error, Result};

/// How precision and recall are pooled across images.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Ratio of totals.
    #[default]
    Micro,
    /// Mean of per-image ratios, over images where the ratio is defined.
    Macro,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChairCounts {
    pub images: usize,
    pub hallucinated_images: usize,
    pub mentions: usize,
    pub hallucinated_mentions: usize,
    /// Σ |extracted| (set per image).
    pub extracted_objects: usize,
    /// Σ |extracted ∩ ground truth|.
    pub correct_objects: usize,
    /// Σ |ground truth|.
    pub gt_objects: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChairReport {
    pub chair_s: f64,
    pub chair_i: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub aggregation: Aggregation,
    pub counts: ChairCounts,
}

fn pct(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        100.0 * num as f64 / den as f64
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// CHAIR scores for a set of captions.
///
/// Ratios with an empty denominator (no images, nothing extracted, no
/// ground truth) are reported as 0.
pub fn chair_scores(
    captions: &[Caption],
    annotations: &Annotations,
    lexicon: &ObjectLexicon,
    aggregation: Aggregation,
) -> Result<ChairReport> {
    let mut c = ChairCounts::default();
    let (mut p_sum, mut p_n, mut r_sum, mut r_n) = (0.0, 0usize, 0.0, 0usize);
    for cap in captions {
        let gt = annotations
            .get(&cap.image_id)
            .ok_or_else(|| Error::MissingAnnotation(cap.image_id.clone()))?;
        let ex = extract_objects(&cap.caption, lexicon);
        let correct = ex.objects.intersection(gt).count();
        let hallucinated_mentions = ex.mentions.iter().filter(|m| !gt.contains(*m)).count();

        c.images += 1;
        if correct < ex.objects.len() {
            c.hallucinated_images += 1;
        }
        c.mentions += ex.mentions.len();
        c.hallucinated_mentions += hallucinated_mentions;
        c.extracted_objects += ex.objects.len();
        c.correct_objects += correct;
        c.gt_objects += gt.len();

        if !ex.objects.is_empty() {
            p_sum += correct as f64 / ex.objects.len() as f64;
            p_n += 1;
        }
        if !gt.is_empty() {
            r_sum += correct as f64 / gt.len() as f64;
            r_n += 1;
        }
    }

    let (precision, recall) = match aggregation {
        Aggregation::Micro => (
            pct(c.correct_objects, c.extracted_objects),
            pct(c.correct_objects, c.gt_objects),
        ),
        Aggregation::Macro => (
            if p_n == 0 { 0.0 } else { 100.0 * p_sum / p_n as f64 },
            if r_n == 0 { 0.0 } else { 100.0 * r_sum / r_n as f64 },
        ),
    };
    Ok(ChairReport {
        chair_s: pct(c.hallucinated_images, c.images),
        chair_i: pct(c.hallucinated_mentions, c.mentions),
        precision,
        recall,
        f1: harmonic(precision, recall),
        aggregation,
        counts: c,
    })
}

#[cfg(test)]
pub(crate) mod tests_support {
    use super::*;
    use std::collections::BTreeMap;

    pub(crate) fn lexicon() -> ObjectLexicon {
        let entries: BTreeMap<String, Vec<String>> = [
            ("person", vec!["man", "woman"]),
            ("dog", vec![]),
            ("cat", vec![]),
            ("car", vec![]),
            ("table", vec![]),
            ("bicycle", vec!["bike"]),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v.into_iter().map(String::from).collect()))
        .collect();
        ObjectLexicon::new(entries).unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::tests_support::lexicon;
    use super::*;
    use std::collections::BTreeSet;

    fn ann(items: &[(&str, &[&str])]) -> Annotations {
        items
            .iter()
            .map(|(k, v)| {
                (
                    k.to_string(),
                    v.iter().map(|s| s.to_string()).collect::<BTreeSet<_>>(),
                )
            })
            .collect()
    }

    fn caps(items: &[(&str, &str)]) -> Vec<Caption> {
        items
            .iter()
            .map(|(i, c)| Caption {
                image_id: i.to_string(),
                caption: c.to_string(),
            })
            .collect()
    }

    #[test]
    fn perfect_captions() {
        let a = ann(&[("1", &["dog", "person"]), ("2", &["car"])]);
        let c = caps(&[("1", "a man and his dog"), ("2", "a red car")]);
        let r = chair_scores(&c, &a, &lexicon(), Aggregation::Micro).unwrap();
        assert_eq!(r.chair_s, 0.0);
        assert_eq!(r.chair_i, 0.0);
        assert_eq!((r.precision, r.recall, r.f1), (100.0, 100.0, 100.0));
    }

    #[test]
    fn only_hallucinations() {
        let a = ann(&[("1", &["dog"])]);
        let c = caps(&[("1", "a cat on a table")]);
        let r = chair_scores(&c, &a, &lexicon(), Aggregation::Micro).unwrap();
        assert_eq!(r.precision, 0.0);
        assert_eq!(r.chair_s, 100.0);
        assert_eq!(r.chair_i, 100.0);
        assert_eq!(r.f1, 0.0);
    }

    #[test]
    fn missing_annotation() {
        let c = caps(&[("9", "a dog")]);
        assert!(matches!(
            chair_scores(&c, &Annotations::new(), &lexicon(), Aggregation::Micro),
            Err(Error::MissingAnnotation(id)) if id == "9"
        ));
    }

    #[test]
    fn mention_vs_set_semantics() {
        // Two mentions of "cat" (hallucinated), one "dog" (correct).
        let a = ann(&[("1", &["dog", "car"])]);
        let c = caps(&[("1", "a dog, a cat and another cat")]);
        let r = chair_scores(&c, &a, &lexicon(), Aggregation::Micro).unwrap();
        assert!((r.chair_i - 200.0 / 3.0).abs() < 1e-12);
        assert_eq!(r.precision, 50.0);
        assert_eq!(r.recall, 50.0);
    }

    #[test]
    fn macro_differs_from_micro() {
        let a = ann(&[("1", &["dog"]), ("2", &["car"])]);
        let c = caps(&[("1", "a dog"), ("2", "a car, a cat, a table and a bike")]);
        let micro = chair_scores(&c, &a, &lexicon(), Aggregation::Micro).unwrap();
        let macro_ = chair_scores(&c, &a, &lexicon(), Aggregation::Macro).unwrap();
        assert_eq!(micro.precision, 40.0);
        assert_eq!(macro_.precision, 62.5);
    }
}

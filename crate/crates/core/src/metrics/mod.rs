// SPDX-License-Identifier: MIT OR Apache-2.0

//! Object-hallucination metrics over generated captions: CHAIR
//! (sentence/instance level, precision/recall/F1) and OPOPE (offline
//! probe polling scored by accuracy, precision and F-beta).
//!
//! Ratios are reported in percent. Precision and recall use set semantics
//! per image (a repeated mention counts once); CHAIR_I counts mentions.

mod chair;
mod io;
mod lexicon;
mod opope;

pub use chair::{chair_scores, Aggregation, ChairCounts, ChairReport};
pub use io::{load_annotations, load_captions, load_lexicon, load_probes, parse_jsonl};
pub use lexicon::{extract_objects, tokenize, Extraction, ObjectLexicon};
pub use opope::{
    fbeta, opope_scores, validate_probes, OpopeAverage, OpopeProbe, OpopeReport, OpopeScores,
    Polarity, Strategy, DEFAULT_BETA,
};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Version stamped into every metrics report.
pub const METRICS_SCHEMA_VERSION: u32 = 1;

/// Image id → ground-truth canonical objects.
pub type Annotations = BTreeMap<String, BTreeSet<String>>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Caption {
    pub image_id: String,
    pub caption: String,
}

/// Every annotated object must be a canonical lexicon entry.
pub fn validate_annotations(annotations: &Annotations, lexicon: &ObjectLexicon) -> Result<()> {
    for (image, objects) in annotations {
        for o in objects {
            if !lexicon.contains(o) {
                return Err(Error::InvalidLexicon(format!(
                    "annotation of {image} uses unknown object {o:?}"
                )));
            }
        }
    }
    Ok(())
}

/// Aliases under which the same quantities appear in AMBER's generative
/// task: `cover` is CHAIR recall, `hal` is CHAIR_S.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmberAliases {
    pub cover: f64,
    pub hal: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub schema_version: u32,
    pub chair: ChairReport,
    pub amber: AmberAliases,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub opope: Option<OpopeReport>,
}

impl MetricsReport {
    pub fn new(chair: ChairReport, opope: Option<OpopeReport>) -> Self {
        Self {
            schema_version: METRICS_SCHEMA_VERSION,
            amber: AmberAliases {
                cover: chair.recall,
                hal: chair.chair_s,
            },
            chair,
            opope,
        }
    }

    /// Human-readable table.
    pub fn to_text_table(&self) -> String {
        let c = &self.chair;
        let mut s = String::new();
        let _ = writeln!(s, "{:<22}{:>10}", "metric", "value");
        let _ = writeln!(s, "{}", "-".repeat(32));
        for (name, v) in [
            ("CHAIR_S", c.chair_s),
            ("CHAIR_I", c.chair_i),
            ("precision", c.precision),
            ("recall", c.recall),
            ("F1", c.f1),
        ] {
            let _ = writeln!(s, "{name:<22}{v:>10.2}");
        }
        let _ = writeln!(
            s,
            "{:<22}{:>10}",
            "images",
            c.counts.images
        );
        if let Some(o) = &self.opope {
            let _ = writeln!(s);
            let _ = writeln!(
                s,
                "{:<14}{:>10}{:>10}{:>10}",
                "OPOPE", "accuracy", "precision", "F_beta"
            );
            for (strategy, sc) in &o.strategies {
                let flag = if sc.degenerate { " *" } else { "" };
                let _ = writeln!(
                    s,
                    "{:<14}{:>10.2}{:>10.2}{:>10.2}{flag}",
                    strategy.to_string(),
                    sc.accuracy,
                    sc.precision,
                    sc.f_beta
                );
            }
            let _ = writeln!(
                s,
                "{:<14}{:>10.2}{:>10.2}{:>10.2}",
                "average", o.average.accuracy, o.average.precision, o.average.f_beta
            );
            if o.strategies.values().any(|sc| sc.degenerate) {
                let _ = writeln!(s, "* no positive predictions; precision defined as 0");
            }
        }
        s
    }
}

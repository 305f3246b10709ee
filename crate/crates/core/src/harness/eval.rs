// SPDX-License-Identifier: MIT OR Apache-2.0

use std::path::Path;

use super::config::EvalInputs;
use super::generate::GenerationRecord;
use crate::decoder::Vocab;
use crate::error::{Error, Result};
use crate::metrics::{
    chair_scores, load_annotations, load_captions, load_lexicon, load_probes, opope_scores,
    parse_jsonl, validate_annotations, validate_probes, Annotations, Caption, MetricsReport,
    ObjectLexicon,
};

/// Where captions come from.
#[derive(Debug, Clone)]
pub enum CaptionSource<'a> {
    /// JSON-lines of `{image_id, caption}`.
    Captions(&'a Path),
    /// Generation records; `prompt_id` is the image id. Records without
    /// `text` are decoded with the vocabulary.
    Records {
        path: &'a Path,
        vocab: Option<&'a Path>,
    },
}

/// Captions from generation records.
pub fn records_to_captions(records: &[GenerationRecord], vocab: Option<&Vocab>) -> Result<Vec<Caption>> {
    records
        .iter()
        .map(|r| {
            let caption = match (&r.text, vocab) {
                (Some(t), _) => t.clone(),
                (None, Some(v)) => v.decode(&r.generated),
                (None, None) => {
                    return Err(Error::Config(format!(
                        "record {} has no text and no vocabulary was given",
                        r.prompt_id
                    )))
                }
            };
            Ok(Caption {
                image_id: r.prompt_id.clone(),
                caption,
            })
        })
        .collect()
}

pub fn load_caption_source(source: &CaptionSource<'_>) -> Result<Vec<Caption>> {
    match source {
        CaptionSource::Captions(p) => load_captions(p),
        CaptionSource::Records { path, vocab } => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(*path, e))?;
            let records: Vec<GenerationRecord> = parse_jsonl(&text, path)?;
            let vocab = vocab.map(Vocab::load).transpose()?;
            records_to_captions(&records, vocab.as_ref())
        }
    }
}

/// Loaded lexicon and annotations, validated against each other.
pub struct EvalContext {
    pub lexicon: ObjectLexicon,
    pub annotations: Annotations,
    pub inputs: EvalInputs,
}

impl EvalContext {
    pub fn load(inputs: &EvalInputs) -> Result<Self> {
        let lexicon = load_lexicon(&inputs.lexicon)?;
        let annotations = load_annotations(&inputs.annotations)?;
        validate_annotations(&annotations, &lexicon)?;
        Ok(Self {
            lexicon,
            annotations,
            inputs: inputs.clone(),
        })
    }

    pub fn evaluate(&self, captions: &[Caption]) -> Result<MetricsReport> {
        let chair = chair_scores(captions, &self.annotations, &self.lexicon, self.inputs.aggregation)?;
        let opope = match &self.inputs.probes {
            Some(p) => {
                let probes = load_probes(p)?;
                validate_probes(&probes, &self.annotations)?;
                Some(opope_scores(captions, &probes, &self.lexicon, self.inputs.beta)?)
            }
            None => None,
        };
        Ok(MetricsReport::new(chair, opope))
    }
}

pub fn cmd_eval(source: &CaptionSource<'_>, inputs: &EvalInputs) -> Result<MetricsReport> {
    let ctx = EvalContext::load(inputs)?;
    let captions = load_caption_source(source)?;
    ctx.evaluate(&captions)
}

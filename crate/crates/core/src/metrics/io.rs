// SPDX-License-Identifier: MIT OR Apache-2.0

//! Loaders for the metric input files. Schema violations carry the file
//! path and 1-based line number.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::de::DeserializeOwned;

use super::lexicon::ObjectLexicon;
use super::opope::OpopeProbe;
use super::{Annotations, Caption};
use crate::error::{Error, Result};

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn schema(path: &Path, line: usize, message: impl ToString) -> Error {
    Error::Schema {
        path: path.to_path_buf(),
        line,
        message: message.to_string(),
    }
}

/// Parses JSON-lines text; blank lines are skipped.
pub fn parse_jsonl<T: DeserializeOwned>(text: &str, path: &Path) -> Result<Vec<T>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| schema(path, i + 1, e)))
        .collect()
}

fn parse_json<T: DeserializeOwned>(text: &str, path: &Path) -> Result<T> {
    serde_json::from_str(text).map_err(|e| schema(path, e.line(), e))
}

/// `{canonical: [synonyms...]}`.
pub fn load_lexicon(path: impl AsRef<Path>) -> Result<ObjectLexicon> {
    let path = path.as_ref();
    let entries: BTreeMap<String, Vec<String>> = parse_json(&read(path)?, path)?;
    ObjectLexicon::new(entries)
}

/// `{image_id: [objects...]}`.
pub fn load_annotations(path: impl AsRef<Path>) -> Result<Annotations> {
    let path = path.as_ref();
    let raw: BTreeMap<String, Vec<String>> = parse_json(&read(path)?, path)?;
    Ok(raw
        .into_iter()
        .map(|(k, v)| (k, v.into_iter().collect::<BTreeSet<_>>()))
        .collect())
}

/// JSON-lines of `{image_id, caption}`.
pub fn load_captions(path: impl AsRef<Path>) -> Result<Vec<Caption>> {
    let path = path.as_ref();
    parse_jsonl(&read(path)?, path)
}

/// JSON-lines of `{image_id, object, polarity, strategy}`.
pub fn load_probes(path: impl AsRef<Path>) -> Result<Vec<OpopeProbe>> {
    let path = path.as_ref();
    parse_jsonl(&read(path)?, path)
}

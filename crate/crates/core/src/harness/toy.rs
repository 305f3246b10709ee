// SPDX-License-Identifier: MIT OR Apache-2.0

//! Deterministic toy corpus: vocabulary, object lexicon, annotations,
//! probes and prompts for running the whole pipeline on a random model.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{EvalInputs, ModelSource, PromptSource, RunConfig};
use super::generate::write_jsonl_file;
use crate::decoder::{init_random, save_weights, ModelConfig, Vocab};
use crate::error::{Error, Result};
use crate::metrics::{Annotations, OpopeProbe, Polarity, Strategy};
use crate::smoother::SmootherConfig;

pub const SPECIALS: [&str; 4] = ["<bos>", "<eos>", "<img>", "</img>"];

/// `(canonical, synonyms)`.
const OBJECTS: &[(&str, &[&str])] = &[
    ("person", &["man", "woman", "people"]),
    ("dog", &["puppy"]),
    ("cat", &["kitten"]),
    ("car", &["automobile"]),
    ("bus", &[]),
    ("bicycle", &["bike"]),
    ("horse", &["pony"]),
    ("sheep", &["lamb"]),
    ("cow", &["cattle"]),
    ("bird", &["pigeon"]),
    ("boat", &["ship"]),
    ("train", &[]),
    ("truck", &[]),
    ("chair", &["stool"]),
    ("couch", &["sofa"]),
    ("bed", &[]),
    ("table", &["desk"]),
    ("tv", &["television"]),
    ("laptop", &["computer"]),
    ("phone", &["cellphone"]),
    ("book", &[]),
    ("clock", &[]),
    ("vase", &[]),
    ("cup", &["mug"]),
    ("bottle", &[]),
    ("bowl", &[]),
    ("banana", &[]),
    ("apple", &[]),
    ("pizza", &[]),
    ("cake", &[]),
    ("umbrella", &[]),
    ("kite", &[]),
    ("skateboard", &[]),
    ("surfboard", &[]),
    ("bench", &[]),
    ("traffic light", &[]),
    ("fire hydrant", &["hydrant"]),
    ("stop sign", &[]),
    ("elephant", &[]),
    ("giraffe", &[]),
];

const FILLER: &[&str] = &[
    "a", "an", "the", "is", "are", "of", "in", "on", "with", "and", "near", "next", "to", "at",
    "there", "this", "image", "picture", "shows", "describe", "detail", "scene", "large", "small",
    "red", "blue", "green", "white", "black", "brown", "sitting", "standing", "walking", "parked",
    "left", "right", "front", "behind", "background", "foreground", "street", "room", "field",
    "water", "sky", "grass", "road", "wall", "floor", "window", "light", "fire", "stop", "sign",
    "traffic", "two", "three", "several", "some", "its", "their", "under", "over", "by",
];

/// Absent object listed closest to an annotated one.
fn neighbour<'a>(names: &[&'a str], present: &BTreeSet<String>) -> Option<&'a str> {
    let anchor = names.iter().position(|n| present.contains(*n))?;
    (1..names.len())
        .flat_map(|d| [anchor.checked_sub(d), Some(anchor + d)])
        .flatten()
        .filter_map(|i| names.get(i).copied())
        .find(|n| !present.contains(*n))
}

pub struct ToyCorpus {
    pub vocab: Vec<String>,
    pub lexicon: BTreeMap<String, Vec<String>>,
    pub annotations: Annotations,
    pub probes: Vec<OpopeProbe>,
    /// `(prompt_id, text)`.
    pub prompts: Vec<(String, String)>,
}

impl ToyCorpus {
    /// Builds a corpus of `images` images for a vocabulary of `vocab_size`.
    pub fn generate(seed: u64, images: usize, vocab_size: usize) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut words: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        let mut seen: BTreeSet<String> = words.iter().cloned().collect();
        let mut push = |w: &str, words: &mut Vec<String>| {
            if seen.insert(w.to_string()) {
                words.push(w.to_string());
            }
        };
        let mut lexicon = BTreeMap::new();
        for (canon, syn) in OBJECTS {
            for part in canon.split(' ').chain(syn.iter().flat_map(|s| s.split(' '))) {
                push(part, &mut words);
            }
            lexicon.insert(canon.to_string(), syn.iter().map(|s| s.to_string()).collect());
        }
        for f in FILLER {
            push(f, &mut words);
        }
        let mut i = 0;
        while words.len() < vocab_size {
            push(&format!("w{i}"), &mut words);
            i += 1;
        }
        if words.len() > vocab_size {
            return Err(Error::Config(format!(
                "toy corpus needs a vocabulary of at least {}",
                words.len()
            )));
        }

        let names: Vec<&str> = OBJECTS.iter().map(|(c, _)| *c).collect();
        // Popularity follows list order.
        let popular: Vec<&str> = names[..8].to_vec();
        let mut annotations = Annotations::new();
        let mut probes = Vec::new();
        let mut prompts = Vec::new();
        for img in 0..images {
            let id = format!("img{img:03}");
            let n = rng.random_range(2..=5);
            let objs: BTreeSet<String> = names
                .choose_multiple(&mut rng, n)
                .map(|s| s.to_string())
                .collect();
            let absent: Vec<&str> = names.iter().copied().filter(|o| !objs.contains(*o)).collect();
            for o in &objs {
                probes.push(OpopeProbe {
                    image_id: id.clone(),
                    object: o.clone(),
                    polarity: Polarity::Positive,
                    strategy: Strategy::Random,
                });
            }
            let negs = [
                (Strategy::Random, absent.choose(&mut rng).copied()),
                (
                    Strategy::Popular,
                    popular.iter().copied().find(|o| !objs.contains(*o)),
                ),
                (Strategy::Adversarial, neighbour(&names, &objs)),
            ];
            for (strategy, obj) in negs {
                if let Some(o) = obj {
                    probes.push(OpopeProbe {
                        image_id: id.clone(),
                        object: o.to_string(),
                        polarity: Polarity::Negative,
                        strategy,
                    });
                }
            }
            let mut shown: Vec<&String> = objs.iter().collect();
            shown.shuffle(&mut rng);
            let body: Vec<&str> = shown.iter().map(|s| s.as_str()).collect();
            prompts.push((
                id.clone(),
                format!("<bos> <img> {} </img> describe the image in detail", body.join(" ")),
            ));
            annotations.insert(id, objs);
        }
        Ok(Self {
            vocab: words,
            lexicon,
            annotations,
            probes,
            prompts,
        })
    }

    /// Writes the corpus, a random model and a ready-to-run `config.json`
    /// into `dir`. Returns the config.
    pub fn write(&self, dir: &Path, model: &ModelConfig, max_new_tokens: usize) -> Result<RunConfig> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let vocab = Vocab::new(self.vocab.clone())?;
        write_pretty(&dir.join("vocab.json"), &self.vocab)?;
        write_pretty(&dir.join("lexicon.json"), &self.lexicon)?;
        write_pretty(&dir.join("annotations.json"), &self.annotations)?;
        write_jsonl_file(&dir.join("probes.jsonl"), &self.probes)?;
        let prompts: Vec<serde_json::Value> = self
            .prompts
            .iter()
            .map(|(id, text)| {
                vocab.encode(text)?;
                Ok(serde_json::json!({ "prompt_id": id, "text": text }))
            })
            .collect::<Result<_>>()?;
        write_jsonl_file(&dir.join("prompts.jsonl"), &prompts)?;
        let weights = init_random(model)?;
        save_weights(&weights, dir.join("model.kvsm"))?;

        let mut cfg = RunConfig::new(
            ModelSource::Path("model.kvsm".into()),
            PromptSource {
                path: "prompts.jsonl".into(),
                vocab: Some("vocab.json".into()),
            },
        );
        cfg.max_new_tokens = max_new_tokens;
        cfg.eos_token = Some(1);
        cfg.smoother = Some(SmootherConfig::default().with_layers(0, model.num_layers - 1));
        cfg.eval = Some(EvalInputs {
            annotations: "annotations.json".into(),
            lexicon: "lexicon.json".into(),
            probes: Some("probes.jsonl".into()),
            ..EvalInputs::default()
        });
        write_pretty(&dir.join("config.json"), &cfg)?;
        cfg.resolve_paths(dir);
        Ok(cfg)
    }
}

fn write_pretty<T: serde::Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_consistent() {
        let a = ToyCorpus::generate(3, 10, 256).unwrap();
        let b = ToyCorpus::generate(3, 10, 256).unwrap();
        assert_eq!(a.vocab, b.vocab);
        assert_eq!(a.prompts, b.prompts);
        assert_eq!(a.vocab.len(), 256);
        let lex = crate::metrics::ObjectLexicon::new(a.lexicon.clone()).unwrap();
        crate::metrics::validate_annotations(&a.annotations, &lex).unwrap();
        crate::metrics::validate_probes(&a.probes, &a.annotations).unwrap();
        let vocab = Vocab::new(a.vocab.clone()).unwrap();
        for (_, text) in &a.prompts {
            vocab.encode(text).unwrap();
        }
    }
}

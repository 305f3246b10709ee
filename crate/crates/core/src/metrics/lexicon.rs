// SPDX-License-Identifier: MIT OR Apache-2.0

use std::collections::{BTreeMap, BTreeSet, HashMap};


use crate::error::{Error, Result};

/// Canonical objects and the word forms that refer to them.
///
/// The canonical name is itself a form. Forms are lowercased and
/// tokenised like captions, so multi-word phrases ("hot dog") are allowed.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectLexicon {
    entries: BTreeMap<String, BTreeSet<String>>,
    forms: HashMap<String, String>,
    max_words: usize,
}

/// Lowercases and splits on anything that is not alphanumeric.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_string)
        .collect()
}

impl ObjectLexicon {
    pub fn new(entries: BTreeMap<String, Vec<String>>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::InvalidLexicon("lexicon is empty".into()));
        }
        let mut forms: HashMap<String, String> = HashMap::new();
        let mut normalised = BTreeMap::new();
        let mut max_words = 1;
        for (canonical, synonyms) in entries {
            let canon = tokenize(&canonical).join(" ");
            if canon.is_empty() {
                return Err(Error::InvalidLexicon(format!(
                    "canonical name {canonical:?} has no words"
                )));
            }
            let mut set = BTreeSet::new();
            for form in std::iter::once(&canonical).chain(&synonyms) {
                let words = tokenize(form);
                if words.is_empty() {
                    return Err(Error::InvalidLexicon(format!(
                        "empty form for {canonical:?}"
                    )));
                }
                max_words = max_words.max(words.len());
                let key = words.join(" ");
                if let Some(other) = forms.get(&key) {
                    if other != &canon {
                        return Err(Error::InvalidLexicon(format!(
                            "form {key:?} maps to both {other:?} and {canon:?}"
                        )));
                    }
                }
                forms.insert(key.clone(), canon.clone());
                set.insert(key);
            }
            if normalised.insert(canon.clone(), set).is_some() {
                return Err(Error::InvalidLexicon(format!(
                    "canonical {canon:?} listed twice"
                )));
            }
        }
        Ok(Self {
            entries: normalised,
            forms,
            max_words,
        })
    }

    pub fn contains(&self, canonical: &str) -> bool {
        self.entries.contains_key(canonical)
    }

    pub fn canonical_objects(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn forms(&self, canonical: &str) -> Option<&BTreeSet<String>> {
        self.entries.get(canonical)
    }

    /// Canonical object for the phrase `words`, allowing a plural `s`/`es`
    /// on the last word.
    fn lookup(&self, words: &[String]) -> Option<&str> {
        let (last, init) = words.split_last()?;
        let prefix = init.join(" ");
        let join = |w: &str| {
            if prefix.is_empty() {
                w.to_string()
            } else {
                format!("{prefix} {w}")
            }
        };
        let mut candidates = vec![join(last)];
        if let Some(stem) = last.strip_suffix("es") {
            candidates.push(join(stem));
        }
        if let Some(stem) = last.strip_suffix('s') {
            candidates.push(join(stem));
        }
        candidates
            .iter()
            .find_map(|c| self.forms.get(c))
            .map(String::as_str)
    }
}

/// Objects mentioned in one caption.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Extraction {
    /// Canonical object of each mention, in caption order.
    pub mentions: Vec<String>,
    pub objects: BTreeSet<String>,
}

/// Longest-match scan: at each word, the longest lexicon phrase starting
/// there wins and the scan resumes after it.
pub fn extract_objects(caption: &str, lexicon: &ObjectLexicon) -> Extraction {
    let words = tokenize(caption);
    let mut out = Extraction::default();
    let mut i = 0;
    while i < words.len() {
        let longest = lexicon.max_words.min(words.len() - i);
        let hit = (1..=longest)
            .rev()
            .find_map(|n| lexicon.lookup(&words[i..i + n]).map(|c| (n, c.to_string())));
        match hit {
            Some((n, canonical)) => {
                out.objects.insert(canonical.clone());
                out.mentions.push(canonical);
                i += n;
            }
            None => i += 1,
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lex(pairs: &[(&str, &[&str])]) -> ObjectLexicon {
        ObjectLexicon::new(
            pairs
                .iter()
                .map(|(c, s)| (c.to_string(), s.iter().map(|x| x.to_string()).collect()))
                .collect(),
        )
        .unwrap()
    }

    fn set(items: &[&str]) -> BTreeSet<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn direct_synonyms() {
        let l = lex(&[("person", &["man"]), ("bicycle", &["bike"])]);
        let e = extract_objects("a man riding a bike", &l);
        assert_eq!(e.objects, set(&["person", "bicycle"]));
        assert_eq!(e.mentions, vec!["person", "bicycle"]);
    }

    #[test]
    fn longest_phrase_wins() {
        let l = lex(&[("hot dog", &["hot dog"]), ("table", &["table"]), ("dog", &[])]);
        let e = extract_objects("hot dogs on a table", &l);
        assert_eq!(e.objects, set(&["hot dog", "table"]));
    }

    #[test]
    fn no_matches() {
        let l = lex(&[("cat", &[])]);
        assert!(extract_objects("nothing to see here", &l).objects.is_empty());
        assert!(extract_objects("", &l).mentions.is_empty());
    }

    #[test]
    fn plurals_case_and_punctuation() {
        let l = lex(&[("glass", &[]), ("dog", &["puppy"])]);
        let e = extract_objects("Two GLASSES, three dogs. A puppy!", &l);
        assert_eq!(e.mentions, vec!["glass", "dog", "dog"]);
    }

    #[test]
    fn overlapping_forms_rejected() {
        let err = ObjectLexicon::new(
            [
                ("person".to_string(), vec!["man".to_string()]),
                ("adult".to_string(), vec!["man".to_string()]),
            ]
            .into_iter()
            .collect(),
        );
        assert!(matches!(err, Err(Error::InvalidLexicon(_))));
        assert!(ObjectLexicon::new(BTreeMap::new()).is_err());
    }
}

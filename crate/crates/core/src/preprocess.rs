//! Tokenization, the shared vocabulary, and entity delexicalization.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::kg::{Instance, Triple};

const PUNCTUATION: &[char] = &['.', ',', ';', ':', '!', '?', '(', ')', '"', '\''];

pub const PAD: &str = "<pad>";
pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";
pub const UNK: &str = "<unk>";
pub const GLOBAL: &str = "<global>";

pub const PAD_ID: usize = 0;
pub const BOS_ID: usize = 1;
pub const EOS_ID: usize = 2;
pub const UNK_ID: usize = 3;
pub const GLOBAL_ID: usize = 4;

const RESERVED: [&str; 5] = [PAD, BOS, EOS, UNK, GLOBAL];

/// True for delexicalization placeholders such as `MAIN_0` or `TOPIC_3`.
pub fn is_placeholder(token: &str) -> bool {
    let digits = token
        .strip_prefix("MAIN_")
        .or_else(|| token.strip_prefix("TOPIC_"));
    matches!(digits, Some(d) if !d.is_empty() && d.bytes().all(|b| b.is_ascii_digit()))
}

/// Lowercases, splits on whitespace and detaches `.,;:!?()"'` as separate
/// tokens. Placeholder tokens pass through unchanged.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    for word in text.split_whitespace() {
        if is_placeholder(word) {
            tokens.push(word.to_string());
            continue;
        }
        let mut current = String::new();
        for ch in word.chars() {
            if PUNCTUATION.contains(&ch) {
                if !current.is_empty() {
                    tokens.push(std::mem::take(&mut current));
                }
                tokens.push(ch.to_string());
            } else {
                current.extend(ch.to_lowercase());
            }
        }
        if !current.is_empty() {
            tokens.push(current);
        }
    }
    tokens
}

/// Token ↔ index map shared by the encoder input, decoder input and output
/// projection. Indices 0..5 hold the reserved tokens.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
    min_freq: usize,
}

impl Vocabulary {
    /// Builds from an explicit token list; reserved tokens are prepended if
    /// the list does not start with them.
    pub fn from_tokens<I: IntoIterator<Item = String>>(tokens: I, min_freq: usize) -> Self {
        let mut all: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        for t in tokens {
            if !all.contains(&t) {
                all.push(t);
            }
        }
        let mut vocab = Vocabulary {
            tokens: all,
            index: HashMap::new(),
            min_freq,
        };
        vocab.reindex();
        vocab
    }

    fn reindex(&mut self) {
        self.index = self
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
    }

    /// Restores the lookup table after deserialization.
    pub fn rebuild_index(mut self) -> Self {
        self.reindex();
        self
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn min_freq(&self) -> usize {
        self.min_freq
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Index of `token`, or the unknown-token index.
    pub fn id(&self, token: &str) -> usize {
        self.get(token).unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t)).collect()
    }
}

/// Every token that an instance contributes to the shared vocabulary:
/// reference text plus entity and relation label tokens.
fn instance_tokens(instance: &Instance) -> impl Iterator<Item = String> + '_ {
    let labels = instance.triples.iter().flat_map(|t: &Triple| {
        tokenize(&t.subject)
            .into_iter()
            .chain(tokenize(&t.predicate))
            .chain(tokenize(&t.object))
    });
    instance.reference.iter().cloned().chain(labels)
}

/// Counts tokens over the corpus and orders them by descending frequency,
/// then lexicographically. Tokens seen fewer than `min_freq` times are left
/// out and will map to the unknown token.
pub fn build_vocab(instances: &[Instance], min_freq: usize) -> Vocabulary {
    let mut counts: HashMap<String, usize> = HashMap::new();
    for instance in instances {
        for token in instance_tokens(instance) {
            *counts.entry(token).or_default() += 1;
        }
    }
    let mut entries: Vec<(String, usize)> = counts
        .into_iter()
        .filter(|(t, c)| *c >= min_freq && !RESERVED.contains(&t.as_str()))
        .collect();
    entries.sort_by(|(ta, ca), (tb, cb)| cb.cmp(ca).then_with(|| ta.cmp(tb)));
    Vocabulary::from_tokens(entries.into_iter().map(|(t, _)| t), min_freq)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EntityRole {
    Main,
    Topic,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DelexEntry {
    pub placeholder: String,
    pub label: String,
    pub role: EntityRole,
    pub index: usize,
}

/// Placeholder → original entity label, in placeholder creation order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DelexMapping {
    entries: Vec<DelexEntry>,
}

impl DelexMapping {
    pub fn entries(&self) -> &[DelexEntry] {
        &self.entries
    }

    pub fn label(&self, placeholder: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|e| e.placeholder == placeholder)
            .map(|e| e.label.as_str())
    }

    /// Two-column tab-separated form: `placeholder<TAB>label`.
    pub fn to_tsv(&self) -> String {
        self.entries
            .iter()
            .map(|e| format!("{}\t{}\n", e.placeholder, e.label))
            .collect()
    }

    pub fn from_tsv(text: &str) -> Result<Self, String> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (placeholder, label) = line
                .split_once('\t')
                .ok_or_else(|| format!("line {}: expected placeholder<TAB>label", i + 1))?;
            let (role, index) = if let Some(n) = placeholder.strip_prefix("MAIN_") {
                (EntityRole::Main, n)
            } else if let Some(n) = placeholder.strip_prefix("TOPIC_") {
                (EntityRole::Topic, n)
            } else {
                return Err(format!("line {}: `{placeholder}` is not a placeholder", i + 1));
            };
            let index = index
                .parse()
                .map_err(|_| format!("line {}: bad placeholder index", i + 1))?;
            if entries.iter().any(|e: &DelexEntry| e.placeholder == placeholder) {
                return Err(format!("line {}: duplicate placeholder `{placeholder}`", i + 1));
            }
            entries.push(DelexEntry {
                placeholder: placeholder.to_string(),
                label: label.to_string(),
                role,
                index,
            });
        }
        Ok(DelexMapping { entries })
    }
}

impl fmt::Display for DelexMapping {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_tsv())
    }
}

fn same_label(a: &str, b: &str) -> bool {
    tokenize(a) == tokenize(b)
}

/// Replaces the main entity with `MAIN_0` and the i-th topic entity with
/// `TOPIC_i` (1-based) in triples and reference text. Text matching is
/// longest-match-first, scanning left to right; on equal length the main
/// entity wins, then earlier topics.
pub fn delexicalize(instance: &Instance) -> (Instance, DelexMapping) {
    let mut entries = vec![DelexEntry {
        placeholder: "MAIN_0".into(),
        label: instance.main_entity.clone(),
        role: EntityRole::Main,
        index: 0,
    }];
    for (i, topic) in instance.topic_entities.iter().enumerate() {
        entries.push(DelexEntry {
            placeholder: format!("TOPIC_{}", i + 1),
            label: topic.clone(),
            role: EntityRole::Topic,
            index: i + 1,
        });
    }

    let substitute = |label: &str| -> String {
        entries
            .iter()
            .find(|e| same_label(&e.label, label))
            .map(|e| e.placeholder.clone())
            .unwrap_or_else(|| label.to_string())
    };
    let triples = instance
        .triples
        .iter()
        .map(|t| Triple::new(substitute(&t.subject), t.predicate.clone(), substitute(&t.object)))
        .collect();

    let patterns: Vec<(Vec<String>, &str)> = entries
        .iter()
        .map(|e| (tokenize(&e.label), e.placeholder.as_str()))
        .filter(|(tokens, _)| !tokens.is_empty())
        .collect();
    let text = &instance.reference;
    let mut reference = Vec::with_capacity(text.len());
    let mut pos = 0;
    while pos < text.len() {
        let mut best: Option<(usize, &str)> = None;
        for (tokens, placeholder) in &patterns {
            let len = tokens.len();
            if pos + len <= text.len()
                && text[pos..pos + len]
                    .iter()
                    .zip(tokens)
                    .all(|(a, b)| a.to_lowercase() == *b)
                && best.is_none_or(|(l, _)| len > l)
            {
                best = Some((len, placeholder));
            }
        }
        match best {
            Some((len, placeholder)) => {
                reference.push(placeholder.to_string());
                pos += len;
            }
            None => {
                reference.push(text[pos].clone());
                pos += 1;
            }
        }
    }

    let topics = entries[1..].iter().map(|e| e.placeholder.clone()).collect();
    let delexed = Instance {
        main_entity: entries[0].placeholder.clone(),
        topic_entities: topics,
        triples,
        reference,
    };
    (delexed, DelexMapping { entries })
}

/// Replaces placeholders by their (tokenized) entity labels. Placeholders
/// missing from `mapping` are kept verbatim and reported in the returned
/// warning list.
pub fn relexicalize(tokens: &[String], mapping: &DelexMapping) -> (String, Vec<String>) {
    let mut words = Vec::with_capacity(tokens.len());
    let mut warnings = Vec::new();
    for token in tokens {
        if is_placeholder(token) {
            match mapping.label(token) {
                Some(label) => words.extend(tokenize(label)),
                None => {
                    warnings.push(format!("placeholder `{token}` has no mapping"));
                    words.push(token.clone());
                }
            }
        } else {
            words.push(token.clone());
        }
    }
    (words.join(" "), warnings)
}

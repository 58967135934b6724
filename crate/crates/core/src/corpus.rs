//! Standoff corpus format, synthetic nested corpora and dataset splits.
//!
//! A corpus file holds one JSON record per line:
//!
//! ```text
//! {"id":"s1","tokens":["w3","PER.b0","w9","PER.e1"],"entities":[[1,3,"PER"]]}
//! ```
//!
//! Entities are `[start_token, token_length, label]`. Nested and fully overlapping entities of
//! different labels are allowed; an exact duplicate (same span and label) is rejected.

use crate::geometry::TokenSpan;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("line {line}: malformed record: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line} ({id}): entity [{start}, {len}, {label}] is outside the {tokens}-token sentence")]
    OutOfBounds {
        line: usize,
        id: String,
        start: usize,
        len: usize,
        label: String,
        tokens: usize,
    },
    #[error("line {line} ({id}): duplicate entity [{start}, {len}, {label}]")]
    DuplicateEntity {
        line: usize,
        id: String,
        start: usize,
        len: usize,
        label: String,
    },
    #[error("line {line}: duplicate sentence id {id}")]
    DuplicateId { line: usize, id: String },
    #[error("split needs at least 10 documents, got {0}")]
    TooSmall(usize),
    #[error("infeasible synthetic spec: {0}")]
    Infeasible(String),
}

/// `[start, length, label]` on the wire.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "(usize, usize, String)", into = "(usize, usize, String)")]
pub struct EntityMention {
    pub start: usize,
    pub len: usize,
    pub label: String,
}

impl EntityMention {
    pub fn new(start: usize, len: usize, label: impl Into<String>) -> Self {
        EntityMention {
            start,
            len,
            label: label.into(),
        }
    }

    pub fn span(&self) -> TokenSpan {
        TokenSpan::new(self.start, self.len)
    }
}

impl From<(usize, usize, String)> for EntityMention {
    fn from((start, len, label): (usize, usize, String)) -> Self {
        EntityMention { start, len, label }
    }
}

impl From<EntityMention> for (usize, usize, String) {
    fn from(e: EntityMention) -> Self {
        (e.start, e.len, e.label)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub tokens: Vec<String>,
    pub entities: Vec<EntityMention>,
}

impl Document {
    fn validate(&self, line: usize) -> Result<(), CorpusError> {
        let mut seen = HashSet::new();
        for e in &self.entities {
            if e.len == 0 || e.start + e.len > self.tokens.len() {
                return Err(CorpusError::OutOfBounds {
                    line,
                    id: self.id.clone(),
                    start: e.start,
                    len: e.len,
                    label: e.label.clone(),
                    tokens: self.tokens.len(),
                });
            }
            if !seen.insert(e) {
                return Err(CorpusError::DuplicateEntity {
                    line,
                    id: self.id.clone(),
                    start: e.start,
                    len: e.len,
                    label: e.label.clone(),
                });
            }
        }
        Ok(())
    }
}

/// Sorted entity labels; class id `k` (1-based) names `labels[k - 1]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSet {
    labels: Vec<String>,
}

impl LabelSet {
    pub fn new(labels: impl IntoIterator<Item = String>) -> Self {
        let set: BTreeSet<String> = labels.into_iter().collect();
        LabelSet {
            labels: set.into_iter().collect(),
        }
    }

    pub fn from_documents(docs: &[Document]) -> Self {
        LabelSet::new(docs.iter().flat_map(|d| d.entities.iter().map(|e| e.label.clone())))
    }

    /// Number of entity classes `Z`.
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn class_id(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label).map(|i| i + 1)
    }

    pub fn label(&self, class_id: usize) -> Option<&str> {
        class_id
            .checked_sub(1)
            .and_then(|i| self.labels.get(i))
            .map(String::as_str)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }
}

/// Reads a corpus file. Blank lines are skipped; line numbers in errors are 1-based.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<Document>, CorpusError> {
    let path = path.as_ref();
    let io_err = |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = fs::File::open(path).map_err(io_err)?;
    let docs = read_corpus(BufReader::new(file)).map_err(|e| match e {
        CorpusError::Io { source, .. } => io_err(source),
        other => other,
    })?;
    if docs.is_empty() {
        log::warn!("{}: corpus is empty", path.display());
    }
    Ok(docs)
}

pub fn read_corpus(reader: impl BufRead) -> Result<Vec<Document>, CorpusError> {
    let mut docs = Vec::new();
    let mut ids = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|source| CorpusError::Io {
            path: PathBuf::new(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let doc: Document = serde_json::from_str(&line).map_err(|e| CorpusError::Malformed {
            line: line_no,
            message: e.to_string(),
        })?;
        doc.validate(line_no)?;
        if !ids.insert(doc.id.clone()) {
            return Err(CorpusError::DuplicateId {
                line: line_no,
                id: doc.id,
            });
        }
        docs.push(doc);
    }
    Ok(docs)
}

pub fn write_corpus(path: impl AsRef<Path>, docs: &[Document]) -> Result<(), CorpusError> {
    let path = path.as_ref();
    let io_err = |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut out = io::BufWriter::new(fs::File::create(path).map_err(io_err)?);
    for d in docs {
        let line = serde_json::to_string(d).expect("documents always serialize");
        writeln!(out, "{line}").map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

/// Fraction of entities that contain, or are contained in, another entity of the same sentence.
pub fn nesting_ratio(docs: &[Document]) -> f64 {
    let mut total = 0usize;
    let mut nested = 0usize;
    for d in docs {
        for (i, a) in d.entities.iter().enumerate() {
            total += 1;
            let inside = |x: &EntityMention, y: &EntityMention| x.start >= y.start && x.start + x.len <= y.start + y.len;
            if d
                .entities
                .iter()
                .enumerate()
                .any(|(j, b)| i != j && (inside(a, b) || inside(b, a)))
            {
                nested += 1;
            }
        }
    }
    if total == 0 {
        0.0
    } else {
        nested as f64 / total as f64
    }
}

/// Train, dev and test documents.
pub type Split = (Vec<Document>, Vec<Document>, Vec<Document>);

/// Seeded 8:1:1 shuffle split into train, dev and test.
pub fn split(docs: &[Document], seed: u64) -> Result<Split, CorpusError> {
    if docs.len() < 10 {
        return Err(CorpusError::TooSmall(docs.len()));
    }
    let mut order: Vec<usize> = (0..docs.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = docs.len() * 8 / 10;
    let n_dev = docs.len() / 10;
    let pick = |idx: &[usize]| idx.iter().map(|&i| docs[i].clone()).collect::<Vec<_>>();
    Ok((
        pick(&order[..n_train]),
        pick(&order[n_train..n_train + n_dev]),
        pick(&order[n_train + n_dev..]),
    ))
}

/// Shape of a generated corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub sentences: usize,
    /// Number of distinct filler words.
    pub vocab_size: usize,
    /// Entity types `Z`.
    pub num_types: usize,
    pub min_sentence_len: usize,
    pub max_sentence_len: usize,
    /// Relative weight of entity lengths `1, 2, ...`.
    pub entity_len_weights: Vec<f64>,
    /// Target fraction of entities involved in nesting.
    pub nesting_ratio: f64,
    /// Spelling variants per marker token.
    pub marker_variants: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            sentences: 500,
            vocab_size: 200,
            num_types: 5,
            min_sentence_len: 8,
            max_sentence_len: 30,
            // Short entities dominate, with a tail out to six tokens.
            entity_len_weights: vec![0.30, 0.30, 0.15, 0.10, 0.08, 0.07],
            nesting_ratio: 0.35,
            marker_variants: 2,
            seed: 7,
        }
    }
}

const TYPE_NAMES: [&str; 7] = ["PER", "ORG", "GPE", "LOC", "FAC", "VEH", "WEA"];

/// Label of the `k`-th synthetic type (0-based).
pub fn synthetic_label(k: usize) -> String {
    TYPE_NAMES
        .get(k)
        .map(|s| s.to_string())
        .unwrap_or_else(|| format!("T{}", k + 1))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub documents: Vec<Document>,
    pub nesting_ratio: f64,
}

impl SynthSpec {
    fn max_entity_len(&self) -> usize {
        self.entity_len_weights.len()
    }

    fn validate(&self) -> Result<(), CorpusError> {
        let bad = |msg: &str| Err(CorpusError::Infeasible(msg.to_string()));
        if self.num_types == 0 {
            return bad("at least one entity type is required");
        }
        if self.vocab_size == 0 || self.marker_variants == 0 {
            return bad("vocabulary and marker variants must be non-empty");
        }
        if self.min_sentence_len == 0 || self.min_sentence_len > self.max_sentence_len {
            return bad("sentence length range is empty");
        }
        if self.entity_len_weights.is_empty()
            || self.entity_len_weights.iter().any(|w| w.is_nan() || *w < 0.0)
            || self.entity_len_weights.iter().sum::<f64>() <= 0.0
        {
            return bad("entity length weights must be non-negative with a positive sum");
        }
        if self.max_entity_len() > self.max_sentence_len {
            return bad("entity length exceeds the maximum sentence length");
        }
        if !(0.0..=1.0).contains(&self.nesting_ratio) {
            return bad("nesting ratio must lie in [0, 1]");
        }
        if self.nesting_ratio > 0.0 {
            if self.num_types < 2 {
                return bad("nesting needs at least two entity types");
            }
            if self.max_entity_len() < 3 || self.min_sentence_len < 3 {
                return bad("nesting needs room for an outer entity of at least 3 tokens");
            }
        }
        Ok(())
    }
}

fn draw_len(rng: &mut ChaCha8Rng, weights: &[f64], allowed: impl Fn(usize) -> bool) -> Option<usize> {
    let total: f64 = weights
        .iter()
        .enumerate()
        .filter(|(i, _)| allowed(i + 1))
        .map(|(_, w)| w)
        .sum();
    if total <= 0.0 {
        return None;
    }
    let mut x = rng.gen_range(0.0..total);
    for (i, w) in weights.iter().enumerate() {
        if !allowed(i + 1) {
            continue;
        }
        if x < *w {
            return Some(i + 1);
        }
        x -= w;
    }
    (1..=weights.len()).rev().find(|&n| allowed(n) && weights[n - 1] > 0.0)
}

/// Shortest outer entity that keeps a nested pair distinguishable: the inner entity sits
/// strictly inside and covers at most half of the outer one.
fn min_outer_len(inner: usize) -> usize {
    (2 * inner).max(inner + 2)
}

/// Generates a corpus where every entity is a type-marked token pattern.
///
/// A single-token entity of type `T` is a `T.s*` token; a longer one starts with `T.b*` and
/// ends with `T.e*`, with filler words between. Nested pairs put an entity of another type
/// strictly inside an outer one. Neighbouring entity groups never share a type.
pub fn generate_synthetic(spec: &SynthSpec) -> Result<SyntheticCorpus, CorpusError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let weights = &spec.entity_len_weights;
    let max_ent = spec.max_entity_len();
    let nested_inner_ok = |inner: usize| min_outer_len(inner) <= max_ent;
    let labels: Vec<String> = (0..spec.num_types).map(synthetic_label).collect();
    let marker = |rng: &mut ChaCha8Rng, z: usize, role: char| {
        format!("{}.{}{}", labels[z], role, rng.gen_range(0..spec.marker_variants))
    };
    let filler = |rng: &mut ChaCha8Rng| format!("w{}", rng.gen_range(0..spec.vocab_size));

    let r = spec.nesting_ratio;
    let p_nested = if r >= 1.0 { 1.0 } else { r / (2.0 - r) };
    let (mut nested_entities, mut all_entities) = (0usize, 0usize);

    let mut documents = Vec::with_capacity(spec.sentences);
    for s in 0..spec.sentences {
        let n = rng.gen_range(spec.min_sentence_len..=spec.max_sentence_len);
        let mut tokens: Vec<String> = (0..n).map(|_| filler(&mut rng)).collect();
        let mut entities = Vec::new();
        let mut pos = rng.gen_range(0..=2usize);
        let mut prev_types: Vec<usize> = Vec::new();
        loop {
            let current = if all_entities == 0 {
                r
            } else {
                nested_entities as f64 / all_entities as f64
            };
            let want_nested = r > 0.0
                && (r >= 1.0
                    || current < r - 0.02
                    || (current <= r + 0.02 && rng.gen_bool(p_nested)));

            let pick_type = |rng: &mut ChaCha8Rng, avoid: &[usize]| -> usize {
                let choices: Vec<usize> = (0..spec.num_types).filter(|z| !avoid.contains(z)).collect();
                if choices.is_empty() {
                    rng.gen_range(0..spec.num_types)
                } else {
                    choices[rng.gen_range(0..choices.len())]
                }
            };

            if want_nested {
                let inner = draw_len(&mut rng, weights, nested_inner_ok).unwrap_or(1);
                let lo = min_outer_len(inner);
                let outer = draw_len(&mut rng, weights, |k| k >= lo).unwrap_or(lo);
                if pos + outer > n {
                    break;
                }
                let z = pick_type(&mut rng, &prev_types);
                let y = pick_type(&mut rng, &[z]);
                let inner_start = pos + rng.gen_range(1..=outer - inner - 1);
                place(&mut tokens, pos, outer, |role| marker(&mut rng, z, role));
                place(&mut tokens, inner_start, inner, |role| marker(&mut rng, y, role));
                entities.push(EntityMention::new(pos, outer, labels[z].clone()));
                entities.push(EntityMention::new(inner_start, inner, labels[y].clone()));
                nested_entities += 2;
                all_entities += 2;
                prev_types = vec![z, y];
                pos += outer;
            } else {
                let len = draw_len(&mut rng, weights, |_| true).expect("weights validated");
                if pos + len > n {
                    break;
                }
                let z = pick_type(&mut rng, &prev_types);
                place(&mut tokens, pos, len, |role| marker(&mut rng, z, role));
                entities.push(EntityMention::new(pos, len, labels[z].clone()));
                all_entities += 1;
                prev_types = vec![z];
                pos += len;
            }
            pos += rng.gen_range(1..=3usize);
        }
        documents.push(Document {
            id: format!("syn-{s:05}"),
            tokens,
            entities,
        });
    }
    let nesting_ratio = nesting_ratio(&documents);
    Ok(SyntheticCorpus {
        documents,
        nesting_ratio,
    })
}

fn place(tokens: &mut [String], start: usize, len: usize, mut marker: impl FnMut(char) -> String) {
    if len == 1 {
        tokens[start] = marker('s');
    } else {
        tokens[start] = marker('b');
        tokens[start + len - 1] = marker('e');
    }
}

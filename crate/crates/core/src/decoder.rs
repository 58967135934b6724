//! Inference: regressed boxes, 1-D non-maximum suppression and token-aligned entities.

use crate::corpus::{Document, EntityMention};
use crate::encoder::{SentenceInput, VectorStore};
use crate::geometry::{decode_offsets, exceeds, iou, reaches, round_to_tokens, BoxGeometry, OffsetPair, TokenSpan};
use crate::model::{self, HeadOutputs};
use crate::proposal::{Candidate, ProposalConfig, ProposalError, ProposalMode};
use crate::state::{InputError, ModelState, TrainConfig};
use diffcore::TapeError;
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error(transparent)]
    Input(#[from] InputError),
    #[error(transparent)]
    Proposal(#[from] ProposalError),
    #[error(transparent)]
    Tape(#[from] TapeError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictedBox {
    pub geometry: BoxGeometry,
    pub class_id: usize,
    /// Highest non-background probability, which is the probability of `class_id`.
    pub confidence: f64,
    /// Index of the proposal the box was regressed from.
    pub source: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Entity {
    pub span: TokenSpan,
    pub class_id: usize,
    pub confidence: f64,
}

/// How to turn head outputs into entities.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodeOptions {
    pub proposal: ProposalMode,
    pub lambda: f64,
    pub per_class: bool,
}

impl From<&TrainConfig> for DecodeOptions {
    fn from(t: &TrainConfig) -> Self {
        DecodeOptions {
            proposal: t.proposal.clone(),
            lambda: t.nms_lambda,
            per_class: t.per_class_nms,
        }
    }
}

/// Converts head outputs into boxes: background winners are dropped, offsets are applied
/// when present, and boxes with non-positive length or running past the sentence end are
/// discarded.
pub fn boxes_from_heads(candidates: &[Candidate], heads: &HeadOutputs) -> Vec<PredictedBox> {
    let mut out = Vec::new();
    for (i, c) in candidates.iter().enumerate() {
        let probs = heads.probs.row(i);
        let (mut class_id, mut confidence) = (0, f64::NEG_INFINITY);
        for (z, &p) in probs.iter().enumerate().skip(1) {
            if p > confidence {
                class_id = z;
                confidence = p;
            }
        }
        // Ties with background go to background.
        if class_id == 0 || confidence <= probs[0] {
            continue;
        }
        let geometry = match &heads.offsets {
            Some(o) => decode_offsets(
                &c.geometry,
                &OffsetPair {
                    ds: o.get(i, 0),
                    dl: o.get(i, 1),
                },
            ),
            None => c.geometry,
        };
        let valid = geometry.length > 0.0 && geometry.end() <= 1.0 && geometry.start.is_finite();
        if valid {
            out.push(PredictedBox {
                geometry,
                class_id,
                confidence,
                source: i,
            });
        }
    }
    out
}

/// Every surviving box for one sentence, before suppression.
pub fn predict_boxes(
    state: &ModelState,
    input: &SentenceInput,
    proposal: &ProposalMode,
) -> Result<Vec<PredictedBox>, DecodeError> {
    let cfg = ProposalConfig::new(proposal.clone(), state.config.sentence_len);
    let candidates = cfg.propose(input.real_len)?;
    if candidates.is_empty() {
        return Ok(Vec::new());
    }
    let spans: Vec<TokenSpan> = candidates.iter().map(|c| c.span).collect();
    let heads = model::infer(&state.params, &state.config, input, &spans)?;
    Ok(boxes_from_heads(&candidates, &heads))
}

/// Confidence descending, then earlier start, then lower source index.
fn nms_order(a: &PredictedBox, b: &PredictedBox) -> Ordering {
    b.confidence
        .total_cmp(&a.confidence)
        .then(a.geometry.start.total_cmp(&b.geometry.start))
        .then(a.source.cmp(&b.source))
}

/// Whether keeping `kept` removes `other`: overlap above `lambda`, or the same box.
pub fn suppresses(kept: &BoxGeometry, other: &BoxGeometry, lambda: f64) -> bool {
    let v = iou(kept, other);
    exceeds(v, lambda) || reaches(v, 1.0)
}

/// Greedy class-agnostic suppression: repeatedly keep the most confident remaining box and
/// drop every remaining box that overlaps it by more than `lambda`.
pub fn nms(boxes: &[PredictedBox], lambda: f64) -> Vec<PredictedBox> {
    assert!((0.0..=1.0).contains(&lambda), "lambda must lie in [0, 1], got {lambda}");
    let mut remaining = boxes.to_vec();
    remaining.sort_by(nms_order);
    let mut kept = Vec::new();
    while !remaining.is_empty() {
        let best = remaining.remove(0);
        remaining.retain(|b| !suppresses(&best.geometry, &b.geometry, lambda));
        kept.push(best);
    }
    kept
}

/// [`nms`] run separately within each class; output stays in global confidence order.
pub fn nms_per_class(boxes: &[PredictedBox], lambda: f64) -> Vec<PredictedBox> {
    let mut classes: Vec<usize> = boxes.iter().map(|b| b.class_id).collect();
    classes.sort_unstable();
    classes.dedup();
    let mut kept: Vec<PredictedBox> = classes
        .into_iter()
        .flat_map(|z| {
            let of_class: Vec<PredictedBox> = boxes.iter().filter(|b| b.class_id == z).copied().collect();
            nms(&of_class, lambda)
        })
        .collect();
    kept.sort_by(nms_order);
    kept
}

/// Snaps boxes to tokens within the first `real_len` tokens and merges repeats of the same
/// span and class, keeping the highest confidence. Output is sorted by span then class.
pub fn finalize(boxes: &[PredictedBox], sentence_len: usize, real_len: usize) -> Vec<Entity> {
    let mut out: Vec<Entity> = Vec::new();
    for b in boxes {
        let Some(span) = round_to_tokens(&b.geometry, sentence_len) else {
            continue;
        };
        let end = span.end().min(real_len);
        if end <= span.start {
            continue;
        }
        let span = TokenSpan::new(span.start, end - span.start);
        match out.iter_mut().find(|e| e.span == span && e.class_id == b.class_id) {
            Some(e) => e.confidence = e.confidence.max(b.confidence),
            None => out.push(Entity {
                span,
                class_id: b.class_id,
                confidence: b.confidence,
            }),
        }
    }
    out.sort_by_key(|b| (b.span, b.class_id));
    out
}

/// Suppression and rounding applied to already predicted boxes.
pub fn resolve(boxes: &[PredictedBox], options: &DecodeOptions, sentence_len: usize, real_len: usize) -> Vec<Entity> {
    let kept = if options.per_class {
        nms_per_class(boxes, options.lambda)
    } else {
        nms(boxes, options.lambda)
    };
    finalize(&kept, sentence_len, real_len)
}

/// Entities for one document.
pub fn decode_document(
    state: &ModelState,
    doc: &Document,
    vectors: Option<&VectorStore>,
    options: &DecodeOptions,
) -> Result<Vec<Entity>, DecodeError> {
    let input = state.input_for(doc, vectors)?;
    let boxes = predict_boxes(state, &input, &options.proposal)?;
    Ok(resolve(&boxes, options, state.config.sentence_len, input.real_len))
}

/// `[start, length, label, confidence]` on the wire.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "(usize, usize, String, f64)", into = "(usize, usize, String, f64)")]
pub struct ScoredMention {
    pub start: usize,
    pub len: usize,
    pub label: String,
    pub confidence: f64,
}

impl From<(usize, usize, String, f64)> for ScoredMention {
    fn from((start, len, label, confidence): (usize, usize, String, f64)) -> Self {
        ScoredMention {
            start,
            len,
            label,
            confidence,
        }
    }
}

impl From<ScoredMention> for (usize, usize, String, f64) {
    fn from(m: ScoredMention) -> Self {
        (m.start, m.len, m.label, m.confidence)
    }
}

impl ScoredMention {
    pub fn mention(&self) -> EntityMention {
        EntityMention::new(self.start, self.len, self.label.clone())
    }
}

/// One line of a prediction file: the corpus record shape with scored entities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: String,
    pub tokens: Vec<String>,
    pub entities: Vec<ScoredMention>,
}

impl PredictionRecord {
    pub fn mentions(&self) -> (String, Vec<EntityMention>) {
        (self.id.clone(), self.entities.iter().map(ScoredMention::mention).collect())
    }
}

pub fn predict_corpus(
    state: &ModelState,
    docs: &[Document],
    vectors: Option<&VectorStore>,
    options: &DecodeOptions,
) -> Result<Vec<PredictionRecord>, DecodeError> {
    docs.iter()
        .map(|d| {
            let entities = decode_document(state, d, vectors, options)?
                .into_iter()
                .map(|e| ScoredMention {
                    start: e.span.start,
                    len: e.span.len,
                    label: state
                        .labels
                        .label(e.class_id)
                        .map(str::to_string)
                        .unwrap_or_else(|| format!("class{}", e.class_id)),
                    confidence: e.confidence,
                })
                .collect();
            Ok(PredictionRecord {
                id: d.id.clone(),
                tokens: d.tokens.clone(),
                entities,
            })
        })
        .collect()
}

//! Training configuration and the full model state that checkpoints hold.

use crate::corpus::{Document, LabelSet};
use crate::encoder::{SentenceInput, VectorError, VectorStore, Vocabulary};
use crate::geometry::{BoxGeometry, TokenSpan};
use crate::matching::{GroundTruthBox, NegativeSampling};
use crate::model::{ConfigError, InputMode, ModelConfig, Params};
use crate::optim::{AdamState, AdamW};
use crate::proposal::{ProposalConfig, ProposalMode};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// IoU a candidate needs with its truth to count as positive.
    pub gamma: f64,
    /// Weight of the confidence loss.
    pub alpha: f64,
    /// Sampled negatives per positive.
    pub neg_ratio: usize,
    pub negative_sampling: NegativeSampling,
    pub proposal: ProposalMode,
    /// NMS overlap threshold used when decoding.
    pub nms_lambda: f64,
    /// Run NMS separately per class instead of across all classes.
    pub per_class_nms: bool,
    /// Score the training set every this many epochs; 0 disables it.
    pub eval_every: usize,
    /// Stop once training micro-F1 reaches this value.
    pub target_f1: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 5e-5,
            weight_decay: 0.01,
            batch_size: 30,
            epochs: 10,
            seed: 0,
            gamma: 0.7,
            alpha: 1.0,
            neg_ratio: 3,
            negative_sampling: NegativeSampling::Uniform,
            proposal: ProposalMode::default(),
            nms_lambda: 0.6,
            per_class_nms: false,
            eval_every: 1,
            target_f1: None,
        }
    }
}

impl TrainConfig {
    /// Defaults for interval proposals, which use a lower matching threshold.
    pub fn interval() -> Self {
        TrainConfig {
            gamma: 0.6,
            proposal: ProposalMode::interval_default(),
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Model(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight decay must be non-negative, got {}", self.weight_decay));
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1".into());
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad(format!("gamma must lie in (0, 1], got {}", self.gamma));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha must be non-negative, got {}", self.alpha));
        }
        if self.neg_ratio == 0 {
            return bad("negative ratio must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.nms_lambda) {
            return bad(format!("lambda must lie in [0, 1], got {}", self.nms_lambda));
        }
        if let Some(t) = self.target_f1 {
            if !(0.0..=1.0).contains(&t) {
                return bad(format!("target F1 must lie in [0, 1], got {t}"));
            }
        }
        self.proposal
            .validate()
            .map_err(|e| ConfigError::Model(e.to_string()))
    }

    pub fn optimizer(&self) -> AdamW {
        AdamW::new(self.learning_rate, self.weight_decay)
    }
}

#[derive(Debug, Error)]
pub enum InputError {
    #[error(transparent)]
    Vectors(#[from] VectorError),
    #[error("precomputed input needs a vector file")]
    NoVectors,
    #[error("vector width {found} does not match the configured width {expected}")]
    Width { expected: usize, found: usize },
    #[error("sentence {id}: label {label} is not in the model's label set")]
    UnknownLabel { id: String, label: String },
}

/// Everything needed to resume training or to predict.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub config: ModelConfig,
    pub train: TrainConfig,
    /// Present for embedding input.
    pub vocab: Option<Vocabulary>,
    pub labels: LabelSet,
    pub params: Params,
    pub optimizer: AdamState,
    pub epochs_done: usize,
}

impl ModelState {
    pub fn new(config: ModelConfig, train: TrainConfig, vocab: Option<Vocabulary>, labels: LabelSet) -> Self {
        let params = Params::init(&config);
        let optimizer = AdamState::new(&params);
        ModelState {
            config,
            train,
            vocab,
            labels,
            params,
            optimizer,
            epochs_done: 0,
        }
    }

    /// A fresh state sized for `docs`: vocabulary and labels come from the documents.
    pub fn for_corpus(docs: &[Document], mut config: ModelConfig, train: TrainConfig) -> Self {
        let labels = LabelSet::from_documents(docs);
        config.num_classes = labels.len().max(1);
        let vocab = match config.input {
            InputMode::Embedding { .. } => {
                let v = Vocabulary::build(docs.iter().flat_map(|d| d.tokens.iter().map(String::as_str)));
                config.vocab_size = v.len();
                Some(v)
            }
            InputMode::Precomputed { .. } => None,
        };
        ModelState::new(config, train, vocab, labels)
    }

    pub fn proposal(&self) -> ProposalConfig {
        ProposalConfig::new(self.train.proposal.clone(), self.config.sentence_len)
    }

    pub fn input_for(&self, doc: &Document, vectors: Option<&VectorStore>) -> Result<SentenceInput, InputError> {
        let l = self.config.sentence_len;
        match self.config.input {
            InputMode::Embedding { .. } => {
                let vocab = self.vocab.as_ref().expect("embedding models carry a vocabulary");
                Ok(SentenceInput::from_ids(&vocab.encode(&doc.tokens), l))
            }
            InputMode::Precomputed { width } => {
                let store = vectors.ok_or(InputError::NoVectors)?;
                let v = store.get(&doc.id, doc.tokens.len())?;
                if v.cols() != width {
                    return Err(InputError::Width {
                        expected: width,
                        found: v.cols(),
                    });
                }
                Ok(SentenceInput::from_vectors(v, l))
            }
        }
    }

    /// Gold boxes of `doc` that fit in the first `real_len` tokens.
    pub fn truths_for(&self, doc: &Document, real_len: usize) -> Result<Vec<(TokenSpan, GroundTruthBox)>, InputError> {
        let mut out = Vec::new();
        for e in &doc.entities {
            let class_id = self
                .labels
                .class_id(&e.label)
                .ok_or_else(|| InputError::UnknownLabel {
                    id: doc.id.clone(),
                    label: e.label.clone(),
                })?;
            let span = e.span();
            if span.end() <= real_len {
                out.push((
                    span,
                    GroundTruthBox {
                        geometry: BoxGeometry::from_tokens(span.start, span.len, self.config.sentence_len),
                        class_id,
                    },
                ));
            }
        }
        Ok(out)
    }
}

//! Seeded mini-batch training.

use crate::corpus::Document;
use crate::decoder::{predict_corpus, DecodeError, DecodeOptions};
use crate::encoder::{self, SentenceInput, VectorStore, PAD_ID};
use crate::geometry::{BoxGeometry, TokenSpan};
use crate::matching::{assign, sample_hardest_negatives, sample_negatives, GroundTruthBox, MatchAssignment, NegativeSampling};
use crate::metrics::{evaluate, EvalError};
use crate::model::{self, slot, ConfigError, ParamVars};
use crate::objective::{total_loss_node, LossError};
use crate::proposal::ProposalError;
use crate::state::{InputError, ModelState};
use diffcore::{Tape, TapeError, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use crate::state::TrainConfig;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error(transparent)]
    Input(#[from] InputError),
    #[error(transparent)]
    Proposal(#[from] ProposalError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Tape(#[from] TapeError),
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("non-finite loss in epoch {epoch}, batch {batch} (sentence {sentence})")]
    NonFiniteLoss { epoch: usize, batch: usize, sentence: String },
    #[error("non-finite parameters after epoch {epoch}, batch {batch}")]
    NonFiniteParams { epoch: usize, batch: usize },
}

/// Per-epoch training record. Losses are means over the sentences that had candidates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub total_loss: f64,
    pub location_loss: f64,
    pub confidence_loss: f64,
    /// Training-set micro-F1, when it was computed this epoch.
    pub train_f1: Option<f64>,
}

/// A training sentence with everything that does not change between epochs.
struct Example {
    id: String,
    input: SentenceInput,
    spans: Vec<TokenSpan>,
    boxes: Vec<BoxGeometry>,
    truths: Vec<GroundTruthBox>,
    assignment: MatchAssignment,
}

fn prepare(state: &ModelState, docs: &[Document], vectors: Option<&VectorStore>) -> Result<Vec<Example>, TrainError> {
    let proposal = state.proposal();
    docs.iter()
        .map(|doc| {
            let input = state.input_for(doc, vectors)?;
            let gold = state.truths_for(doc, input.real_len)?;
            let truth_spans: Vec<TokenSpan> = gold.iter().map(|(s, _)| *s).collect();
            let candidates = proposal.training_candidates(input.real_len, &truth_spans)?;
            let boxes: Vec<BoxGeometry> = candidates.iter().map(|c| c.geometry).collect();
            let truths: Vec<GroundTruthBox> = gold.into_iter().map(|(_, t)| t).collect();
            let assignment = assign(&boxes, &truths, state.train.gamma);
            Ok(Example {
                id: doc.id.clone(),
                input,
                spans: candidates.iter().map(|c| c.span).collect(),
                boxes,
                truths,
                assignment,
            })
        })
        .collect()
}

/// splitmix64 finalizer, used to derive independent seeds.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn derive_seed(seed: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(mix(seed), |acc, &p| mix(acc ^ mix(p)))
}

/// Loss values and gradients for one sentence.
pub struct SentenceStep {
    pub total: f64,
    pub location: f64,
    pub confidence: f64,
    /// One tensor per parameter slot.
    pub grads: Vec<Tensor>,
}

fn sentence_step(state: &ModelState, ex: &Example, sampling_seed: u64) -> Result<SentenceStep, TrainError> {
    let cfg = &state.config;
    let mut tape = Tape::new();
    let vars = ParamVars::register(&mut tape, &state.params, cfg);
    let features = encoder::encode(&mut tape, &vars, cfg, &ex.input)?;
    let heads = model::heads(&mut tape, &vars, cfg, features, &ex.spans)?;
    let assignment = match state.train.negative_sampling {
        NegativeSampling::Uniform => sample_negatives(&ex.assignment, state.train.neg_ratio, sampling_seed),
        NegativeSampling::Hardest => {
            let probs = tape.value(heads.probs);
            let background: Vec<f64> = (0..probs.rows()).map(|r| probs.get(r, 0)).collect();
            sample_hardest_negatives(&ex.assignment, state.train.neg_ratio, &background)
        }
    };
    let loss = total_loss_node(&mut tape, &heads, &assignment, &ex.boxes, &ex.truths, state.train.alpha)?;
    let value = |v: Option<diffcore::Var>| v.map_or(0.0, |v| tape.value(v).item());
    let (total, location, confidence) = (value(Some(loss.total)), value(loss.location), value(loss.confidence));
    let mut g = tape.backward(loss.total)?;
    let grads = vars
        .to_vec()
        .into_iter()
        .zip(&state.params.tensors)
        .map(|(v, p)| g.take(v).unwrap_or_else(|| Tensor::zeros(p.rows(), p.cols())))
        .collect();
    Ok(SentenceStep {
        total,
        location,
        confidence,
        grads,
    })
}

/// Which parameter slots the optimizer must leave alone.
fn frozen_slots(state: &ModelState) -> Vec<bool> {
    let mut frozen = vec![false; slot::COUNT];
    frozen[slot::EMBEDDING] = !state.config.embedding_trainable();
    frozen
}

/// Training-set micro-F1 under the state's decoding options.
pub fn train_f1(state: &ModelState, docs: &[Document], vectors: Option<&VectorStore>) -> Result<f64, TrainError> {
    let preds = predict_corpus(state, docs, vectors, &DecodeOptions::from(&state.train))?;
    let mentions: Vec<_> = preds.iter().map(|p| p.mentions()).collect();
    Ok(evaluate(&mentions, docs)?.f1())
}

/// Trains `state` on `docs` for `state.train.epochs` more epochs.
///
/// `on_epoch` sees every epoch's log and the state after it. With `target_f1` set, training
/// stops after the first epoch whose training F1 reaches it.
pub fn train(
    state: &mut ModelState,
    docs: &[Document],
    vectors: Option<&VectorStore>,
    mut on_epoch: impl FnMut(&EpochLog, &ModelState),
) -> Result<Vec<EpochLog>, TrainError> {
    state.config.validate()?;
    state.train.validate()?;
    if docs.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    let mut log = Vec::new();
    if state.train.epochs == 0 {
        return Ok(log);
    }
    let examples = prepare(state, docs, vectors)?;
    let optimizer = state.train.optimizer();
    let frozen = frozen_slots(state);
    let seed = state.train.seed;
    let first = state.epochs_done;
    for epoch in first..first + state.train.epochs {
        let mut order: Vec<usize> = (0..examples.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, &[epoch as u64])));
        let (mut sums, mut counted) = ([0.0f64; 3], 0usize);
        for (batch_id, batch) in order.chunks(state.train.batch_size).enumerate() {
            let mut grads: Vec<Tensor> = state
                .params
                .tensors
                .iter()
                .map(|t| Tensor::zeros(t.rows(), t.cols()))
                .collect();
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let ex = &examples[i];
                if ex.spans.is_empty() {
                    continue;
                }
                let step = sentence_step(state, ex, derive_seed(seed, &[epoch as u64, i as u64]))?;
                if !step.total.is_finite() {
                    return Err(TrainError::NonFiniteLoss {
                        epoch,
                        batch: batch_id,
                        sentence: ex.id.clone(),
                    });
                }
                sums[0] += step.total;
                sums[1] += step.location;
                sums[2] += step.confidence;
                counted += 1;
                for (acc, g) in grads.iter_mut().zip(&step.grads) {
                    for (a, x) in acc.data_mut().iter_mut().zip(g.data()) {
                        *a += scale * x;
                    }
                }
            }
            let emb = &mut grads[slot::EMBEDDING];
            if emb.rows() > PAD_ID {
                emb.row_mut(PAD_ID).fill(0.0);
            }
            optimizer.step(&mut state.params, &grads, &mut state.optimizer, &frozen);
            if !state.params.all_finite() {
                return Err(TrainError::NonFiniteParams { epoch, batch: batch_id });
            }
        }
        state.epochs_done = epoch + 1;
        let n = counted.max(1) as f64;
        let every = state.train.eval_every;
        let due = every > 0 && ((epoch + 1 - first).is_multiple_of(every) || epoch + 1 == first + state.train.epochs);
        let f1 = if due { Some(train_f1(state, docs, vectors)?) } else { None };
        let entry = EpochLog {
            epoch: epoch + 1,
            total_loss: sums[0] / n,
            location_loss: sums[1] / n,
            confidence_loss: sums[2] / n,
            train_f1: f1,
        };
        log::info!(
            "epoch {} loss {:.5} (loc {:.5}, conf {:.5}){}",
            entry.epoch,
            entry.total_loss,
            entry.location_loss,
            entry.confidence_loss,
            f1.map(|f| format!(" train F1 {f:.4}")).unwrap_or_default()
        );
        on_epoch(&entry, state);
        log.push(entry);
        if let (Some(target), Some(f)) = (state.train.target_f1, f1) {
            if f >= target {
                break;
            }
        }
    }
    Ok(log)
}

/// Mean per-sentence total loss over `docs` with a fixed negative sample.
pub fn corpus_loss(state: &ModelState, docs: &[Document], vectors: Option<&VectorStore>, seed: u64) -> Result<f64, TrainError> {
    let examples = prepare(state, docs, vectors)?;
    let mut total = 0.0;
    for (i, ex) in examples.iter().enumerate().filter(|(_, e)| !e.spans.is_empty()) {
        total += sentence_step(state, ex, derive_seed(seed, &[i as u64]))?.total;
    }
    Ok(total / examples.len() as f64)
}

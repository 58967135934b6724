//! Experiment drivers: scoring, the classification-only ablation, threshold sweeps and
//! box trajectories across checkpoints.

use crate::corpus::{Document, EntityMention};
use crate::decoder::{predict_boxes, predict_corpus, resolve, DecodeOptions, PredictedBox};
use crate::encoder::VectorStore;
use crate::metrics::{evaluate, Metrics};
use crate::model::ModelConfig;
use crate::state::{ModelState, TrainConfig};
use crate::trainer::{train, EpochLog, TrainError};
use serde::{Deserialize, Serialize};

/// A trained model with its training log.
#[derive(Debug, Clone)]
pub struct Fitted {
    pub state: ModelState,
    pub log: Vec<EpochLog>,
}

/// Builds a fresh model for `docs` and trains it.
pub fn fit(
    docs: &[Document],
    vectors: Option<&VectorStore>,
    config: ModelConfig,
    train_config: TrainConfig,
) -> Result<Fitted, TrainError> {
    let mut state = ModelState::for_corpus(docs, config, train_config);
    let log = train(&mut state, docs, vectors, |_, _| {})?;
    Ok(Fitted { state, log })
}

/// Exact-match metrics of `state` on `docs`.
pub fn score(
    state: &ModelState,
    docs: &[Document],
    vectors: Option<&VectorStore>,
    options: &DecodeOptions,
) -> Result<Metrics, TrainError> {
    let preds = predict_corpus(state, docs, vectors, options)?;
    let mentions: Vec<_> = preds.iter().map(|p| p.mentions()).collect();
    Ok(evaluate(&mentions, docs)?)
}

/// Same as [`score`], counting only gold and predicted entities accepted by `keep`.
pub fn score_where(
    state: &ModelState,
    docs: &[Document],
    vectors: Option<&VectorStore>,
    options: &DecodeOptions,
    keep: impl Fn(&EntityMention) -> bool,
) -> Result<Metrics, TrainError> {
    let preds = predict_corpus(state, docs, vectors, options)?;
    let mentions: Vec<_> = preds
        .iter()
        .map(|p| {
            let (id, es) = p.mentions();
            (id, es.into_iter().filter(|e| keep(e)).collect())
        })
        .collect();
    let gold: Vec<Document> = docs
        .iter()
        .map(|d| Document {
            entities: d.entities.iter().filter(|e| keep(e)).cloned().collect(),
            ..d.clone()
        })
        .collect();
    Ok(evaluate(&mentions, &gold)?)
}

/// The classification-only ablation: the regular pipeline without the regression head, so
/// decoding keeps raw proposal geometry. Returns the fitted model and its metrics on
/// `eval_docs`.
pub fn run_bbc(
    train_docs: &[Document],
    eval_docs: &[Document],
    vectors: Option<&VectorStore>,
    mut config: ModelConfig,
    train_config: TrainConfig,
) -> Result<(Fitted, Metrics), TrainError> {
    config.regression = false;
    let fitted = fit(train_docs, vectors, config, train_config)?;
    let options = DecodeOptions::from(&fitted.state.train);
    let metrics = score(&fitted.state, eval_docs, vectors, &options)?;
    Ok((fitted, metrics))
}

/// One grid point of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub metrics: Metrics,
}

/// Decodes `docs` once and re-runs suppression for every `lambda`.
pub fn sweep_lambda(
    state: &ModelState,
    docs: &[Document],
    vectors: Option<&VectorStore>,
    options: &DecodeOptions,
    lambdas: &[f64],
) -> Result<Vec<SweepRow>, TrainError> {
    let mut cached: Vec<(usize, Vec<PredictedBox>)> = Vec::with_capacity(docs.len());
    for d in docs {
        let input = state.input_for(d, vectors)?;
        cached.push((input.real_len, predict_boxes(state, &input, &options.proposal)?));
    }
    let l = state.config.sentence_len;
    lambdas
        .iter()
        .map(|&lambda| {
            let opts = DecodeOptions {
                lambda,
                ..options.clone()
            };
            let mentions: Vec<_> = docs
                .iter()
                .zip(&cached)
                .map(|(d, (real_len, boxes))| {
                    let es = resolve(boxes, &opts, l, *real_len)
                        .into_iter()
                        .map(|e| EntityMention::new(e.span.start, e.span.len, label_of(state, e.class_id)))
                        .collect();
                    (d.id.clone(), es)
                })
                .collect();
            Ok(SweepRow {
                value: lambda,
                metrics: evaluate(&mentions, docs)?,
            })
        })
        .collect()
}

/// Trains one model per `gamma` on `train_docs` and scores each on `eval_docs`.
pub fn sweep_gamma(
    train_docs: &[Document],
    eval_docs: &[Document],
    vectors: Option<&VectorStore>,
    config: &ModelConfig,
    train_config: &TrainConfig,
    gammas: &[f64],
) -> Result<Vec<SweepRow>, TrainError> {
    gammas
        .iter()
        .map(|&gamma| {
            let t = TrainConfig {
                gamma,
                ..train_config.clone()
            };
            let fitted = fit(train_docs, vectors, config.clone(), t)?;
            let options = DecodeOptions::from(&fitted.state.train);
            Ok(SweepRow {
                value: gamma,
                metrics: score(&fitted.state, eval_docs, vectors, &options)?,
            })
        })
        .collect()
}

/// Tab-separated sweep table with a header naming the swept parameter.
pub fn sweep_table(parameter: &str, rows: &[SweepRow]) -> String {
    let mut out = format!("{parameter}\tprecision\trecall\tf1\n");
    for r in rows {
        out.push_str(&format!(
            "{}\t{:.4}\t{:.4}\t{:.4}\n",
            r.value,
            r.metrics.precision(),
            r.metrics.recall(),
            r.metrics.f1()
        ));
    }
    out
}

/// A predicted box at one training iteration, in normalized coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub iteration: usize,
    pub start: f64,
    pub length: f64,
    pub label: String,
    pub confidence: f64,
}

/// Every box the model emits for `doc` before suppression, for each `(iteration, state)`.
pub fn dump_trajectories<'a>(
    checkpoints: impl IntoIterator<Item = (usize, &'a ModelState)>,
    doc: &Document,
    vectors: Option<&VectorStore>,
) -> Result<Vec<TrajectoryRecord>, TrainError> {
    let mut out = Vec::new();
    for (iteration, state) in checkpoints {
        let input = state.input_for(doc, vectors)?;
        for b in predict_boxes(state, &input, &state.train.proposal)? {
            out.push(TrajectoryRecord {
                iteration,
                start: b.geometry.start,
                length: b.geometry.length,
                label: label_of(state, b.class_id),
                confidence: b.confidence,
            });
        }
    }
    Ok(out)
}

pub fn trajectory_table(records: &[TrajectoryRecord]) -> String {
    let mut out = String::from("iteration\tstart\tlength\tclass\tconfidence\n");
    for r in records {
        out.push_str(&format!(
            "{}\t{:.6}\t{:.6}\t{}\t{:.6}\n",
            r.iteration, r.start, r.length, r.label, r.confidence
        ));
    }
    out
}

fn label_of(state: &ModelState, class_id: usize) -> String {
    state
        .labels
        .label(class_id)
        .map(str::to_string)
        .unwrap_or_else(|| format!("class{class_id}"))
}

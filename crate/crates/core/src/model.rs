//! Model configuration, parameters and the classification and regression heads.

use crate::encoder::{self, SentenceInput, PAD_ID};
use crate::geometry::TokenSpan;
use diffcore::{Axis, Tape, TapeError, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_EMBEDDING_DIM: usize = 16;
pub const DEFAULT_HIDDEN_DIM: usize = 32;
pub const INIT_RANGE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InputMode {
    /// Lookup table over the vocabulary.
    Embedding { dim: usize, trainable: bool },
    /// Externally produced per-token vectors of the given width.
    Precomputed { width: usize },
}

impl InputMode {
    pub fn width(&self) -> usize {
        match *self {
            InputMode::Embedding { dim, .. } => dim,
            InputMode::Precomputed { width } => width,
        }
    }
}

/// How a candidate span is summarized for the heads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateRepr {
    /// Feature rows at the first and last token, side by side.
    #[default]
    BoundaryPair,
    /// Mean of the feature rows inside the span.
    MeanPool,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("invalid model configuration: {0}")]
    Model(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Fixed sentence length `L`.
    pub sentence_len: usize,
    /// Entity classes `Z`, not counting background.
    pub num_classes: usize,
    /// Vocabulary size including the reserved ids; unused for precomputed input.
    pub vocab_size: usize,
    pub input: InputMode,
    pub hidden_dim: usize,
    pub candidate_repr: CandidateRepr,
    /// Without the regression head the model is the classification-only baseline.
    pub regression: bool,
    pub init_seed: u64,
}

impl ModelConfig {
    pub fn new(sentence_len: usize, num_classes: usize, vocab_size: usize) -> Self {
        ModelConfig {
            sentence_len,
            num_classes,
            vocab_size,
            input: InputMode::Embedding {
                dim: DEFAULT_EMBEDDING_DIM,
                trainable: true,
            },
            hidden_dim: DEFAULT_HIDDEN_DIM,
            candidate_repr: CandidateRepr::BoundaryPair,
            regression: true,
            init_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Model(m.to_string()));
        if self.sentence_len == 0 {
            return bad("sentence length must be at least 1");
        }
        if self.num_classes == 0 {
            return bad("at least one entity class is required");
        }
        if self.hidden_dim == 0 || self.input.width() == 0 {
            return bad("hidden and input widths must be positive");
        }
        if matches!(self.input, InputMode::Embedding { .. }) && self.vocab_size < 2 {
            return bad("vocabulary must hold the padding and unknown ids");
        }
        Ok(())
    }

    /// Width of the feature map, `2h`.
    pub fn feature_dim(&self) -> usize {
        2 * self.hidden_dim
    }

    /// Width of a candidate representation.
    pub fn repr_dim(&self) -> usize {
        match self.candidate_repr {
            CandidateRepr::BoundaryPair => 2 * self.feature_dim(),
            CandidateRepr::MeanPool => self.feature_dim(),
        }
    }

    pub fn embedding_trainable(&self) -> bool {
        matches!(self.input, InputMode::Embedding { trainable: true, .. })
    }
}

/// Position of each parameter tensor in [`Params`].
pub mod slot {
    pub const EMBEDDING: usize = 0;
    pub const FWD_W_INPUT: usize = 1;
    pub const FWD_W_HIDDEN: usize = 2;
    pub const FWD_BIAS: usize = 3;
    pub const BWD_W_INPUT: usize = 4;
    pub const BWD_W_HIDDEN: usize = 5;
    pub const BWD_BIAS: usize = 6;
    pub const CLS_WEIGHT: usize = 7;
    pub const CLS_BIAS: usize = 8;
    pub const REG_WEIGHT: usize = 9;
    pub const REG_BIAS: usize = 10;
    pub const COUNT: usize = 11;
}

pub const PARAM_NAMES: [&str; slot::COUNT] = [
    "embedding",
    "forward.w_input",
    "forward.w_hidden",
    "forward.bias",
    "backward.w_input",
    "backward.w_hidden",
    "backward.bias",
    "classifier.weight",
    "classifier.bias",
    "regressor.weight",
    "regressor.bias",
];

/// All parameter tensors in [`slot`] order. Tensors a configuration does not use are `0 x 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub tensors: Vec<Tensor>,
}

impl Params {
    pub fn shapes(config: &ModelConfig) -> [[usize; 2]; slot::COUNT] {
        let (d, h, r, z) = (
            config.input.width(),
            config.hidden_dim,
            config.repr_dim(),
            config.num_classes + 1,
        );
        let emb = match config.input {
            InputMode::Embedding { dim, .. } => [config.vocab_size, dim],
            InputMode::Precomputed { .. } => [0, 0],
        };
        let (reg_w, reg_b) = if config.regression {
            ([r, 2], [1, 2])
        } else {
            ([0, 0], [0, 0])
        };
        [
            emb,
            [d, 4 * h],
            [h, 4 * h],
            [1, 4 * h],
            [d, 4 * h],
            [h, 4 * h],
            [1, 4 * h],
            [r, z],
            [1, z],
            reg_w,
            reg_b,
        ]
    }

    pub fn zeros(config: &ModelConfig) -> Self {
        Params {
            tensors: Self::shapes(config)
                .iter()
                .map(|&[r, c]| Tensor::zeros(r, c))
                .collect(),
        }
    }

    /// Uniform in `[-0.1, 0.1]` from `config.init_seed`; the padding embedding row is zero.
    pub fn init(config: &ModelConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let mut p = Self::zeros(config);
        for t in &mut p.tensors {
            for x in t.data_mut() {
                *x = rng.gen_range(-INIT_RANGE..=INIT_RANGE);
            }
        }
        let emb = &mut p.tensors[slot::EMBEDDING];
        if emb.rows() > PAD_ID {
            emb.row_mut(PAD_ID).fill(0.0);
        }
        p
    }

    pub fn len(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::all_finite)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LstmVars {
    pub w_input: Var,
    pub w_hidden: Var,
    pub bias: Var,
}

/// Parameters registered on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamVars {
    pub embedding: Var,
    pub forward: LstmVars,
    pub backward: LstmVars,
    pub cls_weight: Var,
    pub cls_bias: Var,
    pub reg_weight: Var,
    pub reg_bias: Var,
}

impl ParamVars {
    /// Wraps vars given in [`slot`] order.
    pub fn from_slice(v: &[Var]) -> Self {
        assert_eq!(v.len(), slot::COUNT, "expected one var per parameter slot");
        ParamVars {
            embedding: v[slot::EMBEDDING],
            forward: LstmVars {
                w_input: v[slot::FWD_W_INPUT],
                w_hidden: v[slot::FWD_W_HIDDEN],
                bias: v[slot::FWD_BIAS],
            },
            backward: LstmVars {
                w_input: v[slot::BWD_W_INPUT],
                w_hidden: v[slot::BWD_W_HIDDEN],
                bias: v[slot::BWD_BIAS],
            },
            cls_weight: v[slot::CLS_WEIGHT],
            cls_bias: v[slot::CLS_BIAS],
            reg_weight: v[slot::REG_WEIGHT],
            reg_bias: v[slot::REG_BIAS],
        }
    }

    pub fn to_vec(&self) -> Vec<Var> {
        vec![
            self.embedding,
            self.forward.w_input,
            self.forward.w_hidden,
            self.forward.bias,
            self.backward.w_input,
            self.backward.w_hidden,
            self.backward.bias,
            self.cls_weight,
            self.cls_bias,
            self.reg_weight,
            self.reg_bias,
        ]
    }

    /// Registers `params` on `tape`. A frozen embedding table is recorded as a constant.
    pub fn register(tape: &mut Tape, params: &Params, config: &ModelConfig) -> Self {
        let vars: Vec<Var> = params
            .tensors
            .iter()
            .enumerate()
            .map(|(i, t)| {
                if i == slot::EMBEDDING && !config.embedding_trainable() {
                    tape.input(t.clone())
                } else {
                    tape.param(t.clone())
                }
            })
            .collect();
        Self::from_slice(&vars)
    }
}

/// Head outputs recorded on a tape, one row per candidate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeadVars {
    /// `n x (Z + 1)` softmax probabilities, column 0 is background.
    pub probs: Var,
    /// `n x 2` predicted `(ds, dl)`, absent without the regression head.
    pub offsets: Option<Var>,
}

/// Records both heads over `spans`, which must be non-empty.
pub fn heads(
    tape: &mut Tape,
    vars: &ParamVars,
    config: &ModelConfig,
    features: Var,
    spans: &[TokenSpan],
) -> Result<HeadVars, TapeError> {
    assert!(!spans.is_empty(), "heads need at least one candidate");
    let n = spans.len();
    let rep = match config.candidate_repr {
        CandidateRepr::BoundaryPair => {
            let starts: Vec<usize> = spans.iter().map(|s| s.start).collect();
            let ends: Vec<usize> = spans.iter().map(|s| s.end() - 1).collect();
            let first = tape.gather_rows(features, &starts)?;
            let last = tape.gather_rows(features, &ends)?;
            tape.concat(&[first, last], Axis::Cols)?
        }
        CandidateRepr::MeanPool => {
            let l = config.sentence_len;
            let mut pool = Tensor::zeros(n, l);
            for (i, s) in spans.iter().enumerate() {
                let w = 1.0 / s.len as f64;
                pool.row_mut(i)[s.start..s.end()].fill(w);
            }
            let pool = tape.input(pool);
            tape.matmul(pool, features)?
        }
    };
    let logits = affine(tape, rep, vars.cls_weight, vars.cls_bias, n)?;
    let probs = tape.softmax(logits)?;
    let offsets = if config.regression {
        Some(affine(tape, rep, vars.reg_weight, vars.reg_bias, n)?)
    } else {
        None
    };
    Ok(HeadVars { probs, offsets })
}

fn affine(tape: &mut Tape, x: Var, w: Var, b: Var, n: usize) -> Result<Var, TapeError> {
    let xw = tape.matmul(x, w)?;
    let bias = tape.expand_rows(b, n)?;
    tape.add(xw, bias)
}

/// Plain head values for a set of candidates.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutputs {
    pub probs: Tensor,
    pub offsets: Option<Tensor>,
}

/// Runs encoder and heads without keeping the tape.
pub fn infer(
    params: &Params,
    config: &ModelConfig,
    input: &SentenceInput,
    spans: &[TokenSpan],
) -> Result<HeadOutputs, TapeError> {
    if spans.is_empty() {
        return Ok(HeadOutputs {
            probs: Tensor::zeros(0, config.num_classes + 1),
            offsets: config.regression.then(|| Tensor::zeros(0, 2)),
        });
    }
    let mut tape = Tape::new();
    let vars = ParamVars::register(&mut tape, params, config);
    let features = encoder::encode(&mut tape, &vars, config, input)?;
    let h = heads(&mut tape, &vars, config, features, spans)?;
    Ok(HeadOutputs {
        probs: tape.value(h.probs).clone(),
        offsets: h.offsets.map(|o| tape.value(o).clone()),
    })
}

/// The `L x 2h` feature map for one sentence.
pub fn feature_map(params: &Params, config: &ModelConfig, input: &SentenceInput) -> Result<Tensor, TapeError> {
    let mut tape = Tape::new();
    let vars = ParamVars::register(&mut tape, params, config);
    let f = encoder::encode(&mut tape, &vars, config, input)?;
    Ok(tape.value(f).clone())
}

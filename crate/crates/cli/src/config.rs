//! Run configuration: defaults, then a TOML file, then command-line flags.

use boundreg::matching::NegativeSampling;
use boundreg::model::{CandidateRepr, InputMode, ModelConfig, DEFAULT_EMBEDDING_DIM, DEFAULT_HIDDEN_DIM};
use boundreg::proposal::{ProposalMode, DEFAULT_INTERVAL_LENGTHS, DEFAULT_MAX_LEN};
use boundreg::state::TrainConfig;
use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Sentence length used when neither the file nor the flags set one.
pub const DEFAULT_SENTENCE_LEN: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Every span up to --max-len tokens.
    Exh,
    /// Spans with a length from --proposal-lengths.
    Int,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Repr {
    Boundary,
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    Uniform,
    Hardest,
}

/// Settings that can come from `--config` or from flags; flags win. Every key of the TOML
/// file has the flag's name with `-` replaced by `_`.
#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    /// Proposal mode: exhaustive or interval.
    #[arg(long, value_enum)]
    pub mode: Option<Mode>,
    /// IoU a candidate needs with a gold box to be positive [default: 0.7 exh, 0.6 int].
    #[arg(long)]
    pub gamma: Option<f64>,
    /// NMS overlap threshold [default: 0.6].
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Weight of the confidence loss [default: 1].
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Learning rate [default: 5e-5].
    #[arg(long)]
    pub lr: Option<f64>,
    /// Decoupled weight decay [default: 0.01].
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// Sentences per batch [default: 30].
    #[arg(long)]
    pub batch: Option<usize>,
    /// Training epochs [default: 10].
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Seed for shuffling, sampling and initialization [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Fixed sentence length L [default: 50].
    #[arg(long)]
    pub sentence_len: Option<usize>,
    /// Comma-separated interval lengths [default: 1,3,5,7,11,15,20].
    #[arg(long, value_delimiter = ',')]
    pub proposal_lengths: Option<Vec<usize>>,
    /// Longest exhaustive candidate K [default: 6].
    #[arg(long)]
    pub max_len: Option<usize>,
    /// Sampled negatives per positive [default: 3].
    #[arg(long)]
    pub neg_ratio: Option<usize>,
    /// Negative sampling strategy [default: uniform].
    #[arg(long, value_enum)]
    pub negative_sampling: Option<Sampling>,
    /// Run NMS within each class instead of across classes.
    #[arg(long)]
    pub per_class_nms: Option<bool>,
    /// Recurrent hidden size per direction [default: 32].
    #[arg(long)]
    pub hidden_dim: Option<usize>,
    /// Token embedding width [default: 16].
    #[arg(long)]
    pub embedding_dim: Option<usize>,
    /// Keep the embedding table fixed.
    #[arg(long)]
    pub freeze_embeddings: Option<bool>,
    /// Candidate representation [default: boundary].
    #[arg(long, value_enum)]
    pub repr: Option<Repr>,
    /// Score the training set every N epochs; 0 disables it [default: 1].
    #[arg(long)]
    pub eval_every: Option<usize>,
    /// Stop once training micro-F1 reaches this value.
    #[arg(long)]
    pub target_f1: Option<f64>,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigFileError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: toml::de::Error,
    },
}

impl Settings {
    pub fn load(path: &Path) -> Result<Self, ConfigFileError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigFileError::Io {
            path: path.display().to_string(),
            source,
        })?;
        toml::from_str(&text).map_err(|source| ConfigFileError::Parse {
            path: path.display().to_string(),
            source,
        })
    }

    /// `self` with every value set in `over` replaced.
    pub fn overlay(&self, over: &Settings) -> Settings {
        macro_rules! pick {
            ($($f:ident),*) => { Settings { $($f: over.$f.clone().or_else(|| self.$f.clone()),)* } };
        }
        pick!(
            mode,
            gamma,
            lambda,
            alpha,
            lr,
            weight_decay,
            batch,
            epochs,
            seed,
            sentence_len,
            proposal_lengths,
            max_len,
            neg_ratio,
            negative_sampling,
            per_class_nms,
            hidden_dim,
            embedding_dim,
            freeze_embeddings,
            repr,
            eval_every,
            target_f1
        )
    }

    /// Training configuration after defaults. Interval mode defaults gamma to 0.6.
    pub fn train_config(&self) -> TrainConfig {
        let mut t = match self.mode {
            Some(Mode::Int) => TrainConfig::interval(),
            _ => TrainConfig::default(),
        };
        self.apply(&mut t);
        t
    }

    /// Overwrites the parts of `t` these settings name.
    pub fn apply(&self, t: &mut TrainConfig) {
        match (self.mode, &mut t.proposal) {
            (Some(Mode::Exh), _) => {
                t.proposal = ProposalMode::Exhaustive {
                    max_len: self.max_len.unwrap_or(DEFAULT_MAX_LEN),
                }
            }
            (Some(Mode::Int), _) => {
                t.proposal = ProposalMode::Interval {
                    lengths: self
                        .proposal_lengths
                        .clone()
                        .unwrap_or_else(|| DEFAULT_INTERVAL_LENGTHS.to_vec()),
                }
            }
            (None, ProposalMode::Exhaustive { max_len }) => {
                if let Some(k) = self.max_len {
                    *max_len = k;
                }
                if self.proposal_lengths.is_some() {
                    log::warn!("--proposal-lengths has no effect in exhaustive mode");
                }
            }
            (None, ProposalMode::Interval { lengths }) => {
                if let Some(l) = &self.proposal_lengths {
                    lengths.clone_from(l);
                }
            }
        }
        macro_rules! set {
            ($($field:ident <- $key:ident),*) => { $(if let Some(v) = self.$key { t.$field = v; })* };
        }
        set!(
            gamma <- gamma,
            nms_lambda <- lambda,
            alpha <- alpha,
            learning_rate <- lr,
            weight_decay <- weight_decay,
            batch_size <- batch,
            epochs <- epochs,
            seed <- seed,
            neg_ratio <- neg_ratio,
            per_class_nms <- per_class_nms,
            eval_every <- eval_every
        );
        if let Some(s) = self.negative_sampling {
            t.negative_sampling = match s {
                Sampling::Uniform => NegativeSampling::Uniform,
                Sampling::Hardest => NegativeSampling::Hardest,
            };
        }
        if self.target_f1.is_some() {
            t.target_f1 = self.target_f1;
        }
    }

    /// Model configuration; vocabulary and class counts are filled in from the corpus later.
    /// `vector_width` selects precomputed input.
    pub fn model_config(&self, vector_width: Option<usize>) -> ModelConfig {
        let mut c = ModelConfig::new(self.sentence_len.unwrap_or(DEFAULT_SENTENCE_LEN), 1, 0);
        c.hidden_dim = self.hidden_dim.unwrap_or(DEFAULT_HIDDEN_DIM);
        c.input = match vector_width {
            Some(width) => InputMode::Precomputed { width },
            None => InputMode::Embedding {
                dim: self.embedding_dim.unwrap_or(DEFAULT_EMBEDDING_DIM),
                trainable: !self.freeze_embeddings.unwrap_or(false),
            },
        };
        c.candidate_repr = match self.repr.unwrap_or(Repr::Boundary) {
            Repr::Boundary => CandidateRepr::BoundaryPair,
            Repr::Mean => CandidateRepr::MeanPool,
        };
        c.init_seed = self.seed.unwrap_or(0);
        c
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file() {
        let file: Settings = toml::from_str("mode = \"int\"\nlr = 0.01\nbatch = 5\n").unwrap();
        let flags = Settings {
            lr: Some(0.5),
            ..Settings::default()
        };
        let s = file.overlay(&flags);
        let t = s.train_config();
        assert_eq!(t.learning_rate, 0.5);
        assert_eq!(t.batch_size, 5);
        assert_eq!(t.gamma, 0.6);
        assert_eq!(t.proposal, ProposalMode::interval_default());
    }

    #[test]
    fn defaults_are_exhaustive() {
        let t = Settings::default().train_config();
        assert_eq!(t, TrainConfig::default());
        let c = Settings::default().model_config(None);
        assert_eq!(c.sentence_len, DEFAULT_SENTENCE_LEN);
        assert!(c.embedding_trainable());
    }

    #[test]
    fn apply_keeps_unnamed_fields() {
        let mut t = TrainConfig::interval();
        t.learning_rate = 0.3;
        let s = Settings {
            lambda: Some(0.1),
            proposal_lengths: Some(vec![1, 3, 5, 7]),
            ..Settings::default()
        };
        s.apply(&mut t);
        assert_eq!(t.learning_rate, 0.3);
        assert_eq!(t.nms_lambda, 0.1);
        assert_eq!(
            t.proposal,
            ProposalMode::Interval {
                lengths: vec![1, 3, 5, 7]
            }
        );
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<Settings>("learning_rate = 0.1\n").is_err());
    }

    #[test]
    fn vectors_select_precomputed_input() {
        let c = Settings::default().model_config(Some(7));
        assert_eq!(c.input, InputMode::Precomputed { width: 7 });
    }
}

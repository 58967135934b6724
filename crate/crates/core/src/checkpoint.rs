//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! | bytes        | content                                                     |
//! |--------------|-------------------------------------------------------------|
//! | 8            | magic `BRCKPT\0\0`                                          |
//! | 4            | format version (`u32`)                                      |
//! | 8            | metadata length `n` (`u64`)                                 |
//! | n            | metadata, UTF-8 JSON: configs, vocabulary, labels, shapes   |
//! | 8 per value  | parameters, then Adam first moments, then second moments, each tensor row-major `f64` in slot order |
//! | 32           | SHA-256 of every preceding byte                             |
//!
//! Files are written to a temporary sibling and renamed into place.

use crate::corpus::LabelSet;
use crate::encoder::Vocabulary;
use crate::model::{ModelConfig, Params};
use crate::optim::AdamState;
use crate::state::{ModelState, TrainConfig};
use diffcore::Tensor;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const MAGIC: [u8; 8] = *b"BRCKPT\0\0";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 4 + 8;
const CHECKSUM_LEN: usize = 32;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{0}: not a checkpoint file")]
    NotACheckpoint(PathBuf),
    #[error("{path}: checkpoint format version {found} is not supported (expected {expected})")]
    Version { path: PathBuf, found: u32, expected: u32 },
    #[error("{path}: corrupt checkpoint: {reason}")]
    Corrupt { path: PathBuf, reason: String },
}

#[derive(Serialize, Deserialize)]
struct Meta {
    model: ModelConfig,
    train: TrainConfig,
    vocab: Option<Vocabulary>,
    labels: LabelSet,
    shapes: Vec<[usize; 2]>,
    step: u64,
    epochs_done: usize,
}

/// Serializes `state` into the checkpoint byte layout.
pub fn to_bytes(state: &ModelState) -> Vec<u8> {
    let meta = Meta {
        model: state.config.clone(),
        train: state.train.clone(),
        vocab: state.vocab.clone(),
        labels: state.labels.clone(),
        shapes: state.params.tensors.iter().map(Tensor::shape).collect(),
        step: state.optimizer.step,
        epochs_done: state.epochs_done,
    };
    let meta = serde_json::to_vec(&meta).expect("metadata always serializes");
    let values: usize = 3 * state.params.len();
    let mut out = Vec::with_capacity(HEADER_LEN + meta.len() + 8 * values + CHECKSUM_LEN);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
    out.extend_from_slice(&meta);
    for group in [&state.params.tensors, &state.optimizer.m, &state.optimizer.v] {
        for t in group {
            for x in t.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

/// Parses checkpoint bytes; `path` is only used in error messages.
pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<ModelState, CheckpointError> {
    let corrupt = |reason: &str| CheckpointError::Corrupt {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    if bytes.len() < MAGIC.len() || bytes[..MAGIC.len()] != MAGIC {
        return Err(CheckpointError::NotACheckpoint(path.to_path_buf()));
    }
    if bytes.len() < HEADER_LEN + CHECKSUM_LEN {
        return Err(corrupt("file is truncated"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(CheckpointError::Version {
            path: path.to_path_buf(),
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let (body, stored) = bytes.split_at(bytes.len() - CHECKSUM_LEN);
    if Sha256::digest(body).as_slice() != stored {
        return Err(corrupt("checksum mismatch (truncated or modified)"));
    }
    let meta_len = u64::from_le_bytes(body[12..20].try_into().expect("8 bytes")) as usize;
    let meta_end = HEADER_LEN
        .checked_add(meta_len)
        .filter(|&e| e <= body.len())
        .ok_or_else(|| corrupt("metadata length exceeds file size"))?;
    let meta: Meta =
        serde_json::from_slice(&body[HEADER_LEN..meta_end]).map_err(|e| corrupt(&format!("metadata: {e}")))?;
    if meta.shapes != Params::shapes(&meta.model) {
        return Err(corrupt("tensor shapes do not match the model configuration"));
    }
    let count: usize = meta.shapes.iter().map(|[r, c]| r * c).sum();
    let payload = &body[meta_end..];
    if payload.len() != 3 * count * 8 {
        return Err(corrupt("payload size does not match the tensor shapes"));
    }
    let mut values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    let mut group = || -> Vec<Tensor> {
        meta.shapes
            .iter()
            .map(|&[r, c]| Tensor::from_vec(r, c, values.by_ref().take(r * c).collect()))
            .collect()
    };
    let params = Params { tensors: group() };
    let m = group();
    let v = group();
    if !params.all_finite() {
        return Err(corrupt("non-finite parameter values"));
    }
    Ok(ModelState {
        config: meta.model,
        train: meta.train,
        vocab: meta.vocab,
        labels: meta.labels,
        params,
        optimizer: AdamState { m, v, step: meta.step },
        epochs_done: meta.epochs_done,
    })
}

pub fn save(state: &ModelState, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
    let path = path.as_ref();
    let io_err = |source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp).map_err(io_err)?;
        f.write_all(&to_bytes(state)).map_err(io_err)?;
        f.sync_all().map_err(io_err)?;
    }
    fs::rename(&tmp, path).map_err(io_err)
}

pub fn load(path: impl AsRef<Path>) -> Result<ModelState, CheckpointError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    from_bytes(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Document, EntityMention};
    use crate::model::InputMode;
    use crate::trainer::train;

    fn trained() -> (ModelState, Vec<Document>) {
        let docs = vec![Document {
            id: "a".into(),
            tokens: ["x", "ORG.b0", "y", "ORG.e0", "z"].iter().map(|s| s.to_string()).collect(),
            entities: vec![EntityMention::new(1, 3, "ORG")],
        }];
        let mut c = ModelConfig::new(6, 1, 1);
        c.hidden_dim = 4;
        c.input = InputMode::Embedding {
            dim: 3,
            trainable: true,
        };
        let t = TrainConfig {
            learning_rate: 0.01,
            epochs: 3,
            batch_size: 1,
            ..TrainConfig::default()
        };
        let mut s = ModelState::for_corpus(&docs, c, t);
        train(&mut s, &docs, None, |_, _| {}).unwrap();
        (s, docs)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let (s, docs) = trained();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save(&s, &path).unwrap();
        let back = load(&path).unwrap();
        assert_eq!(back, s);
        assert_eq!(to_bytes(&back), to_bytes(&s));
        let opts = crate::decoder::DecodeOptions::from(&s.train);
        let a = crate::decoder::predict_corpus(&s, &docs, None, &opts).unwrap();
        let b = crate::decoder::predict_corpus(&back, &docs, None, &opts).unwrap();
        assert_eq!(a, b);
        assert!(!dir.path().join("m.ckpt.tmp").exists());
    }

    #[test]
    fn truncation_is_corruption() {
        let (s, _) = trained();
        let bytes = to_bytes(&s);
        for cut in [bytes.len() - 1, bytes.len() / 2, HEADER_LEN + 3] {
            assert!(matches!(
                from_bytes(&bytes[..cut], Path::new("t")),
                Err(CheckpointError::Corrupt { .. })
            ));
        }
    }

    #[test]
    fn flipped_byte_is_corruption() {
        let (s, _) = trained();
        let mut bytes = to_bytes(&s);
        let k = bytes.len() - 100;
        bytes[k] ^= 1;
        assert!(matches!(from_bytes(&bytes, Path::new("t")), Err(CheckpointError::Corrupt { .. })));
    }

    #[test]
    fn other_versions_are_refused() {
        let (s, _) = trained();
        let mut bytes = to_bytes(&s);
        bytes[8..12].copy_from_slice(&0u32.to_le_bytes());
        match from_bytes(&bytes, Path::new("old")) {
            Err(CheckpointError::Version { found: 0, expected: 1, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn foreign_files_are_refused() {
        assert!(matches!(
            from_bytes(b"{\"not\": \"a checkpoint\"}", Path::new("x")),
            Err(CheckpointError::NotACheckpoint(_))
        ));
        assert!(matches!(load("/nonexistent/dir/m.ckpt"), Err(CheckpointError::Io { .. })));
    }
}

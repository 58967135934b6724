//! Token ids, fixed-length padding, precomputed vectors and the bidirectional recurrent encoder.

use crate::model::{LstmVars, ModelConfig, ParamVars};
use diffcore::{Axis, Tape, TapeError, Tensor, Var};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fs;
use std::io::{self, BufRead, BufReader};
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

/// Dense token-to-id table with padding at 0 and unknown at 1.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocabulary {
    fn from(tokens: Vec<String>) -> Self {
        let ids = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocabulary { tokens, ids }
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}

impl Vocabulary {
    /// Builds a vocabulary from every distinct token, in sorted order after the reserved ids.
    pub fn build<'a>(tokens: impl IntoIterator<Item = &'a str>) -> Self {
        let mut distinct: Vec<&str> = tokens.into_iter().collect();
        distinct.sort_unstable();
        distinct.dedup();
        let mut all = vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()];
        all.extend(
            distinct
                .into_iter()
                .filter(|t| *t != PAD_TOKEN && *t != UNK_TOKEN)
                .map(str::to_string),
        );
        Vocabulary::from(all)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.ids.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }
}

/// Right-pads with [`PAD_ID`] or keeps the first `len` ids. Returns the ids and the real length.
pub fn pad_or_trim(ids: &[usize], len: usize) -> (Vec<usize>, usize) {
    assert!(len >= 1, "sentence length must be at least 1");
    let real = ids.len().min(len);
    let mut out = ids[..real].to_vec();
    out.resize(len, PAD_ID);
    (out, real)
}

/// What the recurrent layer reads for one sentence.
#[derive(Debug, Clone, PartialEq)]
pub enum Features {
    /// `L` token ids; positions at or beyond the real length are treated as padding.
    Ids(Vec<usize>),
    /// `L x width` vectors; rows at or beyond the real length are zero.
    Vectors(Tensor),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SentenceInput {
    pub features: Features,
    pub real_len: usize,
}

impl SentenceInput {
    pub fn from_ids(ids: &[usize], sentence_len: usize) -> Self {
        let (ids, real_len) = pad_or_trim(ids, sentence_len);
        SentenceInput {
            features: Features::Ids(ids),
            real_len,
        }
    }

    /// Pads or trims `vectors` (one row per token) to `sentence_len` rows.
    pub fn from_vectors(vectors: &Tensor, sentence_len: usize) -> Self {
        assert!(sentence_len >= 1, "sentence length must be at least 1");
        let real_len = vectors.rows().min(sentence_len);
        let mut out = Tensor::zeros(sentence_len, vectors.cols());
        for r in 0..real_len {
            out.row_mut(r).copy_from_slice(vectors.row(r));
        }
        SentenceInput {
            features: Features::Vectors(out),
            real_len,
        }
    }
}

#[derive(Debug, Error)]
pub enum VectorError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: sentence {id} has width {found}, expected {expected}")]
    Width {
        line: usize,
        id: String,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: duplicate sentence {id}")]
    Duplicate { line: usize, id: String },
    #[error("no vectors for sentence {0}")]
    Missing(String),
    #[error("line {line}: sentence {id} has {vectors} vectors for {tokens} tokens")]
    Count {
        line: usize,
        id: String,
        vectors: usize,
        tokens: usize,
    },
}

/// Per-token vectors produced by an external encoder, keyed by sentence id.
///
/// The text format is a header line `<sentence id> <token count> <width>` followed by one
/// line of `width` whitespace-separated numbers per token. Blank lines and lines starting
/// with `#` are ignored.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorStore {
    width: usize,
    records: HashMap<String, (usize, Tensor)>,
}

impl VectorStore {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, VectorError> {
        let path = path.as_ref();
        let file = fs::File::open(path).map_err(|source| VectorError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::read(BufReader::new(file)).map_err(|e| match e {
            VectorError::Io { source, .. } => VectorError::Io {
                path: path.to_path_buf(),
                source,
            },
            other => other,
        })
    }

    pub fn read(reader: impl BufRead) -> Result<Self, VectorError> {
        let mut lines = reader
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l))
            .filter(|(_, l)| l.as_ref().map_or(true, |s| !s.trim().is_empty() && !s.starts_with('#')));
        let io_err = |source| VectorError::Io {
            path: PathBuf::new(),
            source,
        };
        let mut width = None;
        let mut records = HashMap::new();
        while let Some((line, header)) = lines.next() {
            let header = header.map_err(io_err)?;
            let fields: Vec<&str> = header.split_whitespace().collect();
            let malformed = |message: String| VectorError::Malformed { line, message };
            if fields.len() != 3 {
                return Err(malformed(format!(
                    "expected `<id> <token count> <width>`, got {header:?}"
                )));
            }
            let id = fields[0].to_string();
            let count: usize = fields[1]
                .parse()
                .map_err(|_| malformed(format!("bad token count {:?}", fields[1])))?;
            let w: usize = fields[2]
                .parse()
                .map_err(|_| malformed(format!("bad width {:?}", fields[2])))?;
            let expected = *width.get_or_insert(w);
            if w != expected || w == 0 {
                return Err(VectorError::Width {
                    line,
                    id,
                    expected,
                    found: w,
                });
            }
            let mut data = Vec::with_capacity(count * w);
            for k in 0..count {
                let Some((row_line, row)) = lines.next() else {
                    return Err(VectorError::Count {
                        line,
                        id,
                        vectors: k,
                        tokens: count,
                    });
                };
                let row = row.map_err(io_err)?;
                let values: Vec<f64> = row
                    .split_whitespace()
                    .map(str::parse)
                    .collect::<Result<_, _>>()
                    .map_err(|e| VectorError::Malformed {
                        line: row_line,
                        message: format!("sentence {id}: {e}"),
                    })?;
                if values.len() != w {
                    return Err(VectorError::Width {
                        line: row_line,
                        id,
                        expected: w,
                        found: values.len(),
                    });
                }
                if values.iter().any(|v| !v.is_finite()) {
                    return Err(VectorError::Malformed {
                        line: row_line,
                        message: format!("sentence {id}: non-finite value"),
                    });
                }
                data.extend(values);
            }
            if records.contains_key(&id) {
                return Err(VectorError::Duplicate { line, id });
            }
            records.insert(id, (line, Tensor::from_vec(count, w, data)));
        }
        Ok(VectorStore {
            width: width.unwrap_or(0),
            records,
        })
    }

    /// Vector width, or 0 for an empty store.
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Vectors for sentence `id`, which must have exactly `tokens` rows.
    pub fn get(&self, id: &str, tokens: usize) -> Result<&Tensor, VectorError> {
        let (line, t) = self
            .records
            .get(id)
            .ok_or_else(|| VectorError::Missing(id.to_string()))?;
        if t.rows() != tokens {
            return Err(VectorError::Count {
                line: *line,
                id: id.to_string(),
                vectors: t.rows(),
                tokens,
            });
        }
        Ok(t)
    }
}

/// Records the encoder on `tape` and returns the `L x 2h` feature map.
pub fn encode(
    tape: &mut Tape,
    vars: &ParamVars,
    config: &ModelConfig,
    input: &SentenceInput,
) -> Result<Var, TapeError> {
    let l = config.sentence_len;
    let x = match &input.features {
        Features::Ids(ids) => {
            assert_eq!(ids.len(), l, "token ids must be padded to the sentence length");
            let vocab = config.vocab_size;
            let masked: Vec<usize> = ids
                .iter()
                .enumerate()
                .map(|(i, &id)| match id {
                    _ if i >= input.real_len => PAD_ID,
                    id if id >= vocab => UNK_ID,
                    id => id,
                })
                .collect();
            tape.gather_rows(vars.embedding, &masked)?
        }
        Features::Vectors(v) => {
            assert_eq!(v.rows(), l, "vectors must be padded to the sentence length");
            tape.input(v.clone())
        }
    };
    let forward = run_direction(tape, &vars.forward, x, l, false)?;
    let backward = run_direction(tape, &vars.backward, x, l, true)?;
    tape.concat(&[forward, backward], Axis::Cols)
}

/// One recurrent pass over all `l` rows of `x`; output row `t` is the state after reading row `t`.
fn run_direction(
    tape: &mut Tape,
    cell: &LstmVars,
    x: Var,
    l: usize,
    reverse: bool,
) -> Result<Var, TapeError> {
    let h = tape.value(cell.w_hidden).rows();
    let projected = tape.matmul(x, cell.w_input)?;
    let bias = tape.expand_rows(cell.bias, l)?;
    let projected = tape.add(projected, bias)?;

    let mut outputs: Vec<Option<Var>> = vec![None; l];
    let mut state: Option<(Var, Var)> = None;
    let order: Box<dyn Iterator<Item = usize>> = if reverse {
        Box::new((0..l).rev())
    } else {
        Box::new(0..l)
    };
    for t in order {
        let mut z = tape.gather_rows(projected, &[t])?;
        if let Some((h_prev, _)) = state {
            let recur = tape.matmul(h_prev, cell.w_hidden)?;
            z = tape.add(z, recur)?;
        }
        let gates = tape.sigmoid(z)?;
        let input_gate = tape.slice_cols(gates, 0, h)?;
        let candidate = tape.slice_cols(z, 2 * h, 3 * h)?;
        let candidate = tape.tanh(candidate)?;
        let output_gate = tape.slice_cols(gates, 3 * h, 4 * h)?;
        let mut c = tape.mul(input_gate, candidate)?;
        if let Some((_, c_prev)) = state {
            let forget_gate = tape.slice_cols(gates, h, 2 * h)?;
            let kept = tape.mul(forget_gate, c_prev)?;
            c = tape.add(kept, c)?;
        }
        let squashed = tape.tanh(c)?;
        let h_t = tape.mul(output_gate, squashed)?;
        outputs[t] = Some(h_t);
        state = Some((h_t, c));
    }
    let rows: Vec<Var> = outputs.into_iter().map(|v| v.expect("every step ran")).collect();
    tape.concat(&rows, Axis::Rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn padding_examples() {
        assert_eq!(pad_or_trim(&[5, 6, 7], 5), (vec![5, 6, 7, 0, 0], 3));
        let fifty: Vec<usize> = (2..52).collect();
        assert_eq!(pad_or_trim(&fifty, 50), (fifty.clone(), 50));
        let sixty: Vec<usize> = (2..62).collect();
        assert_eq!(pad_or_trim(&sixty, 50), (sixty[..50].to_vec(), 50));
        assert_eq!(pad_or_trim(&[], 4), (vec![0; 4], 0));
    }

    #[test]
    fn vocabulary_reserves_padding_and_unknown() {
        let v = Vocabulary::build(["b", "a", "b", "c"]);
        assert_eq!(v.len(), 5);
        assert_eq!(v.token(0), Some(PAD_TOKEN));
        assert_eq!(v.token(1), Some(UNK_TOKEN));
        assert_eq!(v.encode(&["a", "c", "zzz"]), vec![2, 4, UNK_ID]);
        let json = serde_json::to_string(&v).unwrap();
        assert_eq!(serde_json::from_str::<Vocabulary>(&json).unwrap(), v);
    }

    #[test]
    fn vectors_are_padded_and_trimmed() {
        let v = Tensor::from_fn(3, 2, |r, c| (r * 2 + c) as f64 + 1.0);
        let s = SentenceInput::from_vectors(&v, 5);
        assert_eq!(s.real_len, 3);
        match &s.features {
            Features::Vectors(t) => {
                assert_eq!(t.shape(), [5, 2]);
                assert_eq!(t.row(2), &[5.0, 6.0]);
                assert_eq!(t.row(4), &[0.0, 0.0]);
            }
            _ => panic!("expected vectors"),
        }
        let s = SentenceInput::from_vectors(&v, 2);
        assert_eq!(s.real_len, 2);
    }

    fn store(text: &str) -> Result<VectorStore, VectorError> {
        VectorStore::read(text.as_bytes())
    }

    #[test]
    fn vector_file_round_trip() {
        let s = store("# toy\ns1 2 3\n0.1 0.2 0.3\n1 2 3\n\ns2 1 3\n-1 0 1e-3\n").unwrap();
        assert_eq!(s.width(), 3);
        assert_eq!(s.len(), 2);
        assert_eq!(s.get("s1", 2).unwrap().row(1), &[1.0, 2.0, 3.0]);
        assert!(matches!(s.get("s3", 1), Err(VectorError::Missing(_))));
        match s.get("s2", 4) {
            Err(VectorError::Count { id, vectors: 1, tokens: 4, line: 6 }) => assert_eq!(id, "s2"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn wide_vectors_accepted() {
        let row = vec!["0.5"; 1536].join(" ");
        let s = store(&format!("big 2 1536\n{row}\n{row}\n")).unwrap();
        assert_eq!(s.width(), 1536);
    }

    #[test]
    fn vector_file_errors_name_the_line() {
        assert!(matches!(
            store("s1 1 3\n0.1 0.2\n"),
            Err(VectorError::Width { line: 2, expected: 3, found: 2, .. })
        ));
        assert!(matches!(
            store("s1 1 2\n0 0\ns2 1 3\n0 0 0\n"),
            Err(VectorError::Width { line: 3, expected: 2, found: 3, .. })
        ));
        assert!(matches!(store("s1 2 2\n0 0\n"), Err(VectorError::Count { vectors: 1, .. })));
        assert!(matches!(store("s1 x 2\n"), Err(VectorError::Malformed { line: 1, .. })));
        assert!(matches!(store("s1 1 1\nfoo\n"), Err(VectorError::Malformed { line: 2, .. })));
        assert!(matches!(
            store("s1 1 1\n0\ns1 1 1\n0\n"),
            Err(VectorError::Duplicate { line: 3, .. })
        ));
    }
}

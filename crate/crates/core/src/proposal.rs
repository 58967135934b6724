//! Candidate box enumeration over the real (unpadded) part of a sentence.

use crate::geometry::{BoxGeometry, TokenSpan};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Interval lengths used when candidates are enumerated intermittently.
pub const DEFAULT_INTERVAL_LENGTHS: [usize; 7] = [1, 3, 5, 7, 11, 15, 20];
/// Longest candidate in exhaustive mode.
pub const DEFAULT_MAX_LEN: usize = 6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProposalError {
    #[error("maximum candidate length must be at least 1")]
    ZeroMaxLen,
    #[error("interval lengths must be non-empty, strictly increasing and >= 1: {0:?}")]
    BadLengths(Vec<usize>),
    #[error("real length {real} exceeds sentence length {sentence}")]
    RealLengthTooLong { real: usize, sentence: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProposalMode {
    /// Every span of 1..=max_len tokens.
    Exhaustive { max_len: usize },
    /// Only spans whose length is in `lengths`.
    Interval { lengths: Vec<usize> },
}

impl Default for ProposalMode {
    fn default() -> Self {
        ProposalMode::Exhaustive {
            max_len: DEFAULT_MAX_LEN,
        }
    }
}

impl ProposalMode {
    pub fn interval_default() -> Self {
        ProposalMode::Interval {
            lengths: DEFAULT_INTERVAL_LENGTHS.to_vec(),
        }
    }

    pub fn validate(&self) -> Result<(), ProposalError> {
        match self {
            ProposalMode::Exhaustive { max_len: 0 } => Err(ProposalError::ZeroMaxLen),
            ProposalMode::Exhaustive { .. } => Ok(()),
            ProposalMode::Interval { lengths } => {
                let increasing = lengths.windows(2).all(|w| w[0] < w[1]);
                if lengths.is_empty() || lengths[0] == 0 || !increasing {
                    Err(ProposalError::BadLengths(lengths.clone()))
                } else {
                    Ok(())
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProposalConfig {
    pub mode: ProposalMode,
    /// Fixed sentence length `L` used for normalization.
    pub sentence_len: usize,
}

/// A proposed box together with the tokens it was enumerated from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub span: TokenSpan,
    pub geometry: BoxGeometry,
}

impl Candidate {
    pub fn from_span(span: TokenSpan, sentence_len: usize) -> Self {
        Candidate {
            span,
            geometry: span.to_box(sentence_len),
        }
    }
}

impl ProposalConfig {
    pub fn new(mode: ProposalMode, sentence_len: usize) -> Self {
        ProposalConfig { mode, sentence_len }
    }

    /// Test-time candidates for a sentence with `real_len` real tokens.
    pub fn propose(&self, real_len: usize) -> Result<Vec<Candidate>, ProposalError> {
        match &self.mode {
            ProposalMode::Exhaustive { .. } => self.propose_exhaustive(real_len),
            ProposalMode::Interval { .. } => self.propose_interval(real_len),
        }
    }

    /// Start-major, length-minor enumeration of all spans up to `max_len` tokens.
    pub fn propose_exhaustive(&self, real_len: usize) -> Result<Vec<Candidate>, ProposalError> {
        self.check(real_len)?;
        let max_len = match &self.mode {
            ProposalMode::Exhaustive { max_len } => *max_len,
            ProposalMode::Interval { lengths } => lengths.last().copied().unwrap_or(0),
        };
        if max_len == 0 {
            return Err(ProposalError::ZeroMaxLen);
        }
        let mut out = Vec::new();
        for start in 0..real_len {
            for len in 1..=max_len.min(real_len - start) {
                out.push(Candidate::from_span(TokenSpan::new(start, len), self.sentence_len));
            }
        }
        Ok(out)
    }

    /// Start-major enumeration restricted to the configured interval lengths.
    pub fn propose_interval(&self, real_len: usize) -> Result<Vec<Candidate>, ProposalError> {
        self.check(real_len)?;
        let lengths: Vec<usize> = match &self.mode {
            ProposalMode::Interval { lengths } => lengths.clone(),
            ProposalMode::Exhaustive { max_len } => (1..=*max_len).collect(),
        };
        let mut out = Vec::new();
        for start in 0..real_len {
            for &len in lengths.iter().take_while(|&&len| start + len <= real_len) {
                out.push(Candidate::from_span(TokenSpan::new(start, len), self.sentence_len));
            }
        }
        Ok(out)
    }

    /// Training pool: the test-time candidates, plus in interval mode every truth span that
    /// the interval lengths would miss (appended in the given order).
    pub fn training_candidates(
        &self,
        real_len: usize,
        truths: &[TokenSpan],
    ) -> Result<Vec<Candidate>, ProposalError> {
        let mut out = self.propose(real_len)?;
        if let ProposalMode::Interval { lengths } = &self.mode {
            let mut seen: Vec<TokenSpan> = Vec::new();
            for &t in truths {
                let proposed = lengths.contains(&t.len) && t.end() <= real_len;
                if !proposed && t.end() <= real_len && t.len > 0 && !seen.contains(&t) {
                    seen.push(t);
                    out.push(Candidate::from_span(t, self.sentence_len));
                }
            }
        }
        Ok(out)
    }

    fn check(&self, real_len: usize) -> Result<(), ProposalError> {
        self.mode.validate()?;
        if real_len > self.sentence_len {
            return Err(ProposalError::RealLengthTooLong {
                real: real_len,
                sentence: self.sentence_len,
            });
        }
        Ok(())
    }
}

//! One-dimensional box arithmetic in normalized sentence coordinates.
//!
//! Token `i` of a sentence padded to length `L` sits at `i / L`. A box covers the half-open
//! interval `[start, start + length)`, so boxes over adjacent tokens do not overlap.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Slack used when comparing an IoU against a threshold, so that ratios like 3/5 compare
/// the same way regardless of how the interval ends were rounded.
pub const IOU_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("box length must be positive, got {0}")]
    NonPositiveLength(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxGeometry {
    pub start: f64,
    pub length: f64,
}

impl BoxGeometry {
    pub const fn new(start: f64, length: f64) -> Self {
        BoxGeometry { start, length }
    }

    /// Box covering `token_len` tokens from `start_token` in a sentence of length `sentence_len`.
    pub fn from_tokens(start_token: usize, token_len: usize, sentence_len: usize) -> Self {
        let l = sentence_len as f64;
        BoxGeometry {
            start: start_token as f64 / l,
            length: token_len as f64 / l,
        }
    }

    pub fn end(&self) -> f64 {
        self.start + self.length
    }

    /// Positive length and fully inside `[0, 1]`.
    pub fn is_valid(&self) -> bool {
        self.length > 0.0 && self.start >= 0.0 && self.end() <= 1.0 && self.start.is_finite()
    }
}

/// Intersection over union of two intervals. Zero for disjoint or touching boxes.
pub fn iou(a: &BoxGeometry, b: &BoxGeometry) -> f64 {
    let (a_end, b_end) = (a.end(), b.end());
    let inter = a_end.min(b_end) - a.start.max(b.start);
    if inter <= 0.0 {
        return 0.0;
    }
    // The union of two overlapping intervals is a single interval.
    let union = a_end.max(b_end) - a.start.min(b.start);
    (inter / union).min(1.0)
}

/// `iou >= threshold`, up to [`IOU_TOLERANCE`].
pub fn reaches(iou: f64, threshold: f64) -> bool {
    iou >= threshold - IOU_TOLERANCE
}

/// `iou > threshold`, up to [`IOU_TOLERANCE`].
pub fn exceeds(iou: f64, threshold: f64) -> bool {
    iou > threshold + IOU_TOLERANCE
}

/// Regression target moving box `d` onto box `g`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OffsetPair {
    /// Position offset, normalized by the target length.
    pub ds: f64,
    /// Log ratio of target length to source length.
    pub dl: f64,
}

impl OffsetPair {
    pub const ZERO: OffsetPair = OffsetPair { ds: 0.0, dl: 0.0 };
}

pub fn encode_offsets(d: &BoxGeometry, g: &BoxGeometry) -> Result<OffsetPair, GeometryError> {
    if d.length.is_nan() || d.length <= 0.0 {
        return Err(GeometryError::NonPositiveLength(d.length));
    }
    if g.length.is_nan() || g.length <= 0.0 {
        return Err(GeometryError::NonPositiveLength(g.length));
    }
    Ok(OffsetPair {
        ds: (g.start - d.start) / g.length,
        dl: (g.length / d.length).ln(),
    })
}

/// Inverse of [`encode_offsets`]. The length is recovered first because the position offset
/// is normalized by the target length.
pub fn decode_offsets(d: &BoxGeometry, off: &OffsetPair) -> BoxGeometry {
    let length = d.length * off.dl.exp();
    BoxGeometry {
        start: d.start + off.ds * length,
        length,
    }
}

/// A run of whole tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TokenSpan {
    pub start: usize,
    pub len: usize,
}

impl TokenSpan {
    pub const fn new(start: usize, len: usize) -> Self {
        TokenSpan { start, len }
    }

    /// Exclusive end token.
    pub fn end(&self) -> usize {
        self.start + self.len
    }

    pub fn to_box(&self, sentence_len: usize) -> BoxGeometry {
        BoxGeometry::from_tokens(self.start, self.len, sentence_len)
    }
}

/// Snaps both boundaries of `b` to the nearest token boundary (half away from zero), clamped
/// to `[0, sentence_len]`. `None` when nothing is left.
pub fn round_to_tokens(b: &BoxGeometry, sentence_len: usize) -> Option<TokenSpan> {
    assert!(sentence_len >= 1, "sentence length must be at least 1");
    let l = sentence_len as f64;
    let snap = |x: f64| -> i64 { (x * l).round().clamp(0.0, l) as i64 };
    let start = snap(b.start);
    let end = snap(b.end());
    if end - start <= 0 {
        return None;
    }
    Some(TokenSpan::new(start as usize, (end - start) as usize))
}

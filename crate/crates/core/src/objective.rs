//! Location, confidence and total training losses.

use crate::geometry::{encode_offsets, BoxGeometry, GeometryError, OffsetPair};
use crate::matching::{GroundTruthBox, MatchAssignment};
use crate::model::{HeadOutputs, HeadVars};
use diffcore::{Tape, TapeError, Tensor, Var};
use thiserror::Error;

/// Probabilities are clamped to at least this before taking the log.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error(transparent)]
    Tape(#[from] TapeError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// `0.5 x^2` inside `(-1, 1)`, `|x| - 0.5` outside.
pub fn smooth_l1(x: f64) -> f64 {
    diffcore::smooth_l1(x)
}

/// Derivative of [`smooth_l1`].
pub fn smooth_l1_grad(x: f64) -> f64 {
    if x.abs() < 1.0 {
        x
    } else {
        x.signum()
    }
}

/// Regression targets for every positive: `(candidate, target offsets, 1 / |neighbourhood|)`.
pub fn regression_targets(
    assignment: &MatchAssignment,
    candidates: &[BoxGeometry],
    truths: &[GroundTruthBox],
) -> Result<Vec<(usize, OffsetPair, f64)>, GeometryError> {
    let mut out = Vec::new();
    for (j, hood) in assignment.neighbourhoods.iter().enumerate() {
        let weight = 1.0 / hood.len() as f64;
        for &i in hood {
            out.push((i, encode_offsets(&candidates[i], &truths[j].geometry)?, weight));
        }
    }
    Ok(out)
}

/// Records the location loss over `offsets` (`n x 2`). `None` when no truth has neighbours.
pub fn location_loss_node(
    tape: &mut Tape,
    offsets: Var,
    assignment: &MatchAssignment,
    candidates: &[BoxGeometry],
    truths: &[GroundTruthBox],
) -> Result<Option<Var>, LossError> {
    let targets = regression_targets(assignment, candidates, truths)?;
    if targets.is_empty() {
        return Ok(None);
    }
    let mut cells = Vec::with_capacity(2 * targets.len());
    let mut negated = Vec::with_capacity(2 * targets.len());
    let mut weights = Vec::with_capacity(2 * targets.len());
    for &(i, t, w) in &targets {
        cells.extend([(i, 0), (i, 1)]);
        negated.extend([-t.ds, -t.dl]);
        weights.extend([w, w]);
    }
    let predicted = tape.gather_elements(offsets, &cells)?;
    let target = tape.input(Tensor::column_vector(negated));
    let diff = tape.add(predicted, target)?;
    let per = tape.smooth_l1(diff)?;
    let weights = tape.input(Tensor::column_vector(weights));
    let weighted = tape.mul(per, weights)?;
    Ok(Some(tape.sum(weighted)?))
}

/// Records the confidence loss over `probs`. `None` when there is nothing to score.
pub fn confidence_loss_node(
    tape: &mut Tape,
    probs: Var,
    assignment: &MatchAssignment,
    truths: &[GroundTruthBox],
) -> Result<Option<Var>, LossError> {
    let cells: Vec<(usize, usize)> = assignment
        .positives()
        .chain(assignment.sampled_negatives())
        .map(|i| (i, assignment.target_class(i, truths)))
        .collect();
    if cells.is_empty() {
        return Ok(None);
    }
    let picked = tape.gather_elements(probs, &cells)?;
    let logp = tape.log_clamped(picked, PROB_FLOOR)?;
    let total = tape.sum(logp)?;
    Ok(Some(tape.scale(total, -1.0)?))
}

/// Loss nodes for one sentence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LossVars {
    pub total: Var,
    pub location: Option<Var>,
    pub confidence: Option<Var>,
}

/// Records `location + alpha * confidence`. Without a regression head only the confidence
/// term is used.
pub fn total_loss_node(
    tape: &mut Tape,
    heads: &HeadVars,
    assignment: &MatchAssignment,
    candidates: &[BoxGeometry],
    truths: &[GroundTruthBox],
    alpha: f64,
) -> Result<LossVars, LossError> {
    assert!(alpha >= 0.0, "alpha must be non-negative");
    let location = match heads.offsets {
        Some(o) => location_loss_node(tape, o, assignment, candidates, truths)?,
        None => None,
    };
    let confidence = confidence_loss_node(tape, heads.probs, assignment, truths)?;
    let weighted = match confidence {
        Some(c) => Some(tape.scale(c, alpha)?),
        None => None,
    };
    let total = match (location, weighted) {
        (Some(l), Some(c)) => tape.add(l, c)?,
        (Some(v), None) | (None, Some(v)) => v,
        (None, None) => tape.input(Tensor::scalar(0.0)),
    };
    Ok(LossVars {
        total,
        location,
        confidence,
    })
}

/// Location loss of fixed head outputs.
pub fn location_loss(
    assignment: &MatchAssignment,
    heads: &HeadOutputs,
    candidates: &[BoxGeometry],
    truths: &[GroundTruthBox],
) -> Result<f64, LossError> {
    let Some(offsets) = &heads.offsets else {
        return Ok(0.0);
    };
    let mut tape = Tape::new();
    let o = tape.input(offsets.clone());
    let node = location_loss_node(&mut tape, o, assignment, candidates, truths)?;
    Ok(node.map_or(0.0, |v| tape.value(v).item()))
}

/// Confidence loss of fixed head outputs.
pub fn confidence_loss(
    assignment: &MatchAssignment,
    heads: &HeadOutputs,
    truths: &[GroundTruthBox],
) -> Result<f64, LossError> {
    let mut tape = Tape::new();
    let p = tape.input(heads.probs.clone());
    let node = confidence_loss_node(&mut tape, p, assignment, truths)?;
    Ok(node.map_or(0.0, |v| tape.value(v).item()))
}

pub fn total_loss(
    assignment: &MatchAssignment,
    heads: &HeadOutputs,
    candidates: &[BoxGeometry],
    truths: &[GroundTruthBox],
    alpha: f64,
) -> Result<f64, LossError> {
    assert!(alpha >= 0.0, "alpha must be non-negative");
    Ok(location_loss(assignment, heads, candidates, truths)?
        + alpha * confidence_loss(assignment, heads, truths)?)
}

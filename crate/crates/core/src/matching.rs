//! Training assignment: positives, negatives, neighbourhoods and negative sampling.

use crate::geometry::{iou, reaches, BoxGeometry};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// IoUs closer than this are treated as tied when picking a candidate's truth.
pub const TIE_TOLERANCE: f64 = 1e-12;

/// An annotated entity as a box. `class_id` is in `1..=Z`; 0 is background.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthBox {
    pub geometry: BoxGeometry,
    pub class_id: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SetTag {
    Positive,
    Negative,
    /// A negative selected to contribute to the confidence loss.
    SampledNegative,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CandidateMatch {
    /// Matched truth for positives, `None` otherwise.
    pub truth: Option<usize>,
    /// Best IoU over all truths (0 when there are none).
    pub iou: f64,
    pub tag: SetTag,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativeSampling {
    /// Uniform without replacement, seeded.
    #[default]
    Uniform,
    /// The negatives with the lowest background probability.
    Hardest,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchAssignment {
    pub candidates: Vec<CandidateMatch>,
    /// Candidate indices per truth, in candidate order.
    pub neighbourhoods: Vec<Vec<usize>>,
}

impl MatchAssignment {
    pub fn positives(&self) -> impl Iterator<Item = usize> + '_ {
        self.indices_with(SetTag::Positive)
    }

    pub fn sampled_negatives(&self) -> impl Iterator<Item = usize> + '_ {
        self.indices_with(SetTag::SampledNegative)
    }

    /// All negatives, sampled or not.
    pub fn negatives(&self) -> impl Iterator<Item = usize> + '_ {
        self.candidates
            .iter()
            .enumerate()
            .filter(|(_, m)| m.tag != SetTag::Positive)
            .map(|(i, _)| i)
    }

    fn indices_with(&self, tag: SetTag) -> impl Iterator<Item = usize> + '_ {
        self.candidates
            .iter()
            .enumerate()
            .filter(move |(_, m)| m.tag == tag)
            .map(|(i, _)| i)
    }

    /// Class the candidate is trained towards: the matched truth's class, or background.
    pub fn target_class(&self, candidate: usize, truths: &[GroundTruthBox]) -> usize {
        self.candidates[candidate]
            .truth
            .map(|j| truths[j].class_id)
            .unwrap_or(0)
    }

    pub fn positive_count(&self) -> usize {
        self.positives().count()
    }
}

/// Matches every candidate to its highest-IoU truth and splits candidates at `gamma`.
///
/// Ties on IoU go to the truth that starts first, then the shorter one, then the earlier
/// index. A candidate is positive when its best IoU reaches `gamma`.
pub fn assign(candidates: &[BoxGeometry], truths: &[GroundTruthBox], gamma: f64) -> MatchAssignment {
    assert!(gamma > 0.0 && gamma <= 1.0, "gamma must lie in (0, 1], got {gamma}");
    let mut neighbourhoods = vec![Vec::new(); truths.len()];
    let mut out = Vec::with_capacity(candidates.len());
    for (i, c) in candidates.iter().enumerate() {
        let mut best: Option<(usize, f64)> = None;
        for (j, t) in truths.iter().enumerate() {
            let v = iou(c, &t.geometry);
            let better = match best {
                None => true,
                Some((k, bv)) => {
                    let other = &truths[k].geometry;
                    v > bv + TIE_TOLERANCE
                        || ((v - bv).abs() <= TIE_TOLERANCE
                            && (t.geometry.start, t.geometry.length) < (other.start, other.length))
                }
            };
            if better {
                best = Some((j, v));
            }
        }
        let m = match best {
            Some((j, v)) if reaches(v, gamma) => {
                neighbourhoods[j].push(i);
                CandidateMatch {
                    truth: Some(j),
                    iou: v,
                    tag: SetTag::Positive,
                }
            }
            Some((_, v)) => CandidateMatch {
                truth: None,
                iou: v,
                tag: SetTag::Negative,
            },
            None => CandidateMatch {
                truth: None,
                iou: 0.0,
                tag: SetTag::Negative,
            },
        };
        out.push(m);
    }
    MatchAssignment {
        candidates: out,
        neighbourhoods,
    }
}

/// How many negatives to keep for `positives` positives out of `negatives` available.
pub fn negative_quota(positives: usize, negatives: usize, ratio: usize) -> usize {
    let wanted = if positives == 0 { ratio } else { ratio * positives };
    wanted.min(negatives)
}

/// Marks `ratio` negatives per positive (at least `ratio` when there are no positives) as
/// sampled, uniformly at random under `seed`. Resets any previous sampling.
pub fn sample_negatives(assignment: &MatchAssignment, ratio: usize, seed: u64) -> MatchAssignment {
    assert!(ratio >= 1, "negative ratio must be at least 1");
    let mut out = clear_sampling(assignment);
    let negatives: Vec<usize> = out.negatives().collect();
    let quota = negative_quota(out.positive_count(), negatives.len(), ratio);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked: Vec<usize> = sample(&mut rng, negatives.len(), quota).into_vec();
    picked.sort_unstable();
    for k in picked {
        out.candidates[negatives[k]].tag = SetTag::SampledNegative;
    }
    out
}

/// Like [`sample_negatives`] but keeps the negatives the model finds hardest, i.e. those with
/// the lowest background probability. Ties go to the earlier candidate.
pub fn sample_hardest_negatives(
    assignment: &MatchAssignment,
    ratio: usize,
    background_prob: &[f64],
) -> MatchAssignment {
    assert!(ratio >= 1, "negative ratio must be at least 1");
    assert_eq!(background_prob.len(), assignment.candidates.len());
    let mut out = clear_sampling(assignment);
    let mut negatives: Vec<usize> = out.negatives().collect();
    let quota = negative_quota(out.positive_count(), negatives.len(), ratio);
    negatives.sort_by(|&a, &b| background_prob[a].total_cmp(&background_prob[b]).then(a.cmp(&b)));
    for &i in &negatives[..quota] {
        out.candidates[i].tag = SetTag::SampledNegative;
    }
    out
}

fn clear_sampling(assignment: &MatchAssignment) -> MatchAssignment {
    let mut out = assignment.clone();
    for m in &mut out.candidates {
        if m.tag == SetTag::SampledNegative {
            m.tag = SetTag::Negative;
        }
    }
    out
}

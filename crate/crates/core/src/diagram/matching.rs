//! Labels relation candidates against ground truth and draws the
//! per-diagram training sample.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{DiagramAnnotation, DiagramObject, RelationCandidate};
use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Positive,
    Negative,
}

impl Label {
    pub fn target(self) -> f64 {
        match self {
            Label::Positive => 1.0,
            Label::Negative => 0.0,
        }
    }
}

/// Per-diagram sample size and class balance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingConfig {
    pub k: usize,
    /// Negatives drawn per positive.
    pub negatives_per_positive: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            k: 160,
            negatives_per_positive: 7,
        }
    }
}

impl SamplingConfig {
    pub fn positive_target(&self) -> usize {
        self.k / (1 + self.negatives_per_positive)
    }
}

/// Labels every candidate. Each ground-truth relation, in order, claims the
/// highest-scoring candidate not already claimed (ties to the lowest index),
/// where the score is the mean of the source and destination box IoUs.
/// Self-pairs are never positive, nor are candidates with zero score.
pub fn match_candidates(
    candidates: &[RelationCandidate],
    objects: &[DiagramObject],
    annotation: &DiagramAnnotation,
) -> Vec<Label> {
    let mut labels = vec![Label::Negative; candidates.len()];
    for &(s, d) in &annotation.relations {
        let (gs, gd) = (&annotation.objects[s].bbox, &annotation.objects[d].bbox);
        let mut best: Option<(usize, f64)> = None;
        for (ci, c) in candidates.iter().enumerate() {
            if c.is_self_pair() || labels[ci] == Label::Positive {
                continue;
            }
            let score = (objects[c.src].bbox.iou(gs) + objects[c.dst].bbox.iou(gd)) / 2.0;
            if score > 0.0 && best.map_or(true, |(_, b)| score > b) {
                best = Some((ci, score));
            }
        }
        if let Some((ci, _)) = best {
            labels[ci] = Label::Positive;
        }
    }
    labels
}

/// Draws up to `k` candidate indices without replacement: the positive
/// target first, the remainder from negatives (then any leftover
/// positives). Returns sorted indices.
pub fn sample_labeled<R: Rng + ?Sized>(labels: &[Label], config: &SamplingConfig, rng: &mut R) -> Vec<usize> {
    if config.k >= labels.len() {
        if config.k > labels.len() {
            log::warn!(
                "sample size {} exceeds {} candidates; using all of them",
                config.k,
                labels.len()
            );
        }
        return (0..labels.len()).collect();
    }
    let mut pos: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == Label::Positive).collect();
    let mut neg: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == Label::Negative).collect();
    pos.shuffle(rng);
    neg.shuffle(rng);
    let n_pos = config.positive_target().min(pos.len());
    let n_neg = (config.k - n_pos).min(neg.len());
    let n_extra = config.k - n_pos - n_neg;
    let mut out: Vec<usize> = pos[..n_pos]
        .iter()
        .chain(&neg[..n_neg])
        .chain(&pos[n_pos..n_pos + n_extra])
        .copied()
        .collect();
    out.sort_unstable();
    out
}

/// Matching followed by sampling; returned candidates carry their label.
pub fn match_and_sample<R: Rng + ?Sized>(
    candidates: &[RelationCandidate],
    objects: &[DiagramObject],
    annotation: &DiagramAnnotation,
    config: &SamplingConfig,
    rng: &mut R,
) -> Result<Vec<RelationCandidate>> {
    let labels = match_candidates(candidates, objects, annotation);
    Ok(sample_labeled(&labels, config, rng)
        .into_iter()
        .map(|i| RelationCandidate {
            label: Some(labels[i]),
            ..candidates[i].clone()
        })
        .collect())
}

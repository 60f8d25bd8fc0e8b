//! Longitudinal distances over prediction traces, and explainer-set
//! selection.
//!
//! Two instances that a classifier labeled identically at the end of every
//! training epoch are longitudinally indistinguishable; the longitudinal
//! distance is the fraction of epochs at which their labels differ. The
//! strict variant weights the comparison to the epochs where the *training*
//! instance was classified correctly, which makes it directional: it is not
//! symmetric, so it is a weaker notion of distance. The negative variant
//! flips the indicator and scores disagreement instead.
//!
//! All values are exact fractions `m / d` realized in floating point, where
//! `m` counts epochs and `d` is the epoch count (or the correct-epoch count
//! for the strict variant). Computing them as a single integer division keeps
//! the advertised identities exact: the strict variant reduces bit-for-bit to
//! the plain one under an all-ones weight row, and positive and negative
//! values sum to exactly 1.
//!
//! A target's *explainer distance* is the minimum distance to any training
//! instance; the training instances within `epsilon` of it form the explainer
//! set (positive or negative per the distance used). Set membership allows an
//! absolute slack of 1e-12 beyond `epsilon` to absorb representation error of
//! the `1/d` multiples.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trace::{CorrectnessMask, Label, TraceError, TraceMatrix};

/// Slack added to `epsilon` in membership comparisons.
pub const MEMBERSHIP_SLACK: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum DistanceError {
    #[error("epoch-label rows have different lengths: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("rows must cover at least one epoch")]
    EmptyRows,
    #[error("weight row length {weights} does not match epoch count {epochs}")]
    WeightLengthMismatch { weights: usize, epochs: usize },
    #[error("weight row must be binary, got {value} at epoch {epoch}")]
    NonBinaryWeight { epoch: usize, value: u8 },
    #[error("trace epoch counts differ: train has {train}, target row has {target}")]
    EpochMismatch { train: usize, target: usize },
    #[error("strict longitudinal distance requires true labels on the training trace")]
    MissingTrueLabels,
    #[error("cannot select an explainer set from an empty distance vector")]
    EmptyDistanceVector,
    #[error("epsilon must be non-negative and finite, got {0}")]
    BadEpsilon(f64),
    #[error("explainer results cover different training-set sizes: {positive} vs {negative}")]
    TrainSizeMismatch { positive: usize, negative: usize },
    #[error("explainer_union expects one result per polarity, got {0:?} twice")]
    DuplicatePolarity(Polarity),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

/// Which distance drives a computation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DistanceKind {
    /// Fraction of epochs with differing labels, over all epochs.
    #[serde(rename = "ld")]
    Longitudinal,
    /// Same fraction, restricted to epochs where the training instance was
    /// classified correctly.
    #[serde(rename = "sld")]
    StrictLongitudinal,
}

impl DistanceKind {
    pub fn code(self) -> &'static str {
        match self {
            DistanceKind::Longitudinal => "ld",
            DistanceKind::StrictLongitudinal => "sld",
        }
    }
}

/// Whether agreement (positive) or disagreement (negative) counts as close.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Positive,
    Negative,
}

/// Distances from one target to every training instance.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceVector {
    pub kind: DistanceKind,
    pub polarity: Polarity,
    /// Index of the target instance in its own trace, when known.
    pub target_index: Option<usize>,
    /// Distance per training instance, each in [0, 1].
    pub values: Vec<f64>,
    /// Per training instance: set when the strict variant hit a weight row
    /// that sums to zero and fell back to the maximal-distance convention.
    pub flags: Vec<bool>,
}

/// The minimum distance and the training instances attaining it within
/// `epsilon`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplainerResult {
    pub kind: DistanceKind,
    pub polarity: Polarity,
    pub explainer_distance: f64,
    pub epsilon: f64,
    /// Ascending indices of training instances with distance ≤ explainer
    /// distance + epsilon.
    pub member_indices: Vec<usize>,
    /// Members whose distance came from the zero-weight convention.
    pub flagged_members: Vec<usize>,
    /// Size of the training set the result was computed over.
    pub n_train: usize,
}

/// One member of a combined explainer set, tagged with the polarity it was
/// selected under. An index selected under both polarities appears twice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaggedMember {
    pub index: usize,
    pub polarity: Polarity,
}

fn check_rows(left: &[Label], right: &[Label]) -> Result<(), DistanceError> {
    if left.len() != right.len() {
        return Err(DistanceError::LengthMismatch { left: left.len(), right: right.len() });
    }
    if left.is_empty() {
        return Err(DistanceError::EmptyRows);
    }
    Ok(())
}

fn mismatches(left: &[Label], right: &[Label]) -> usize {
    left.iter().zip(right).filter(|(a, b)| a != b).count()
}

/// Longitudinal distance between two epoch-label rows: the fraction of
/// epochs at which the labels differ.
pub fn longitudinal(left: &[Label], right: &[Label]) -> Result<f64, DistanceError> {
    check_rows(left, right)?;
    Ok(mismatches(left, right) as f64 / left.len() as f64)
}

/// Negative longitudinal distance: exactly `1 − longitudinal`, so instances
/// that always disagree are at distance 0.
pub fn negative_longitudinal(left: &[Label], right: &[Label]) -> Result<f64, DistanceError> {
    Ok(1.0 - longitudinal(left, right)?)
}

/// Strict longitudinal distance from training row `train_row` (with binary
/// correctness weights `weights`) to `target_row`.
///
/// Counts mismatches over the epochs where the training instance was
/// classified correctly. A training instance that was never classified
/// correctly has no comparable epochs; by convention its distance is 1
/// (maximal) and the returned flag is set, so an always-wrong instance never
/// anchors an explanation but remains auditable.
pub fn strict_longitudinal(
    train_row: &[Label],
    weights: &[u8],
    target_row: &[Label],
) -> Result<(f64, bool), DistanceError> {
    check_rows(train_row, target_row)?;
    if weights.len() != train_row.len() {
        return Err(DistanceError::WeightLengthMismatch {
            weights: weights.len(),
            epochs: train_row.len(),
        });
    }
    if let Some(epoch) = weights.iter().position(|&w| w > 1) {
        return Err(DistanceError::NonBinaryWeight { epoch, value: weights[epoch] });
    }
    let mut correct_epochs = 0usize;
    let mut weighted_mismatches = 0usize;
    for ((&a, &w), &b) in train_row.iter().zip(weights).zip(target_row) {
        if w == 1 {
            correct_epochs += 1;
            if a != b {
                weighted_mismatches += 1;
            }
        }
    }
    if correct_epochs == 0 {
        return Ok((1.0, true));
    }
    Ok((weighted_mismatches as f64 / correct_epochs as f64, false))
}

/// Distances from a target's epoch-label row to every training instance.
///
/// Values are index-addressed and independent of evaluation order; the
/// computation partitions training instances across worker threads.
pub fn distances_to_all(
    train: &TraceMatrix,
    target_row: &[Label],
    kind: DistanceKind,
    polarity: Polarity,
) -> Result<DistanceVector, DistanceError> {
    if train.k_epochs() != target_row.len() {
        return Err(DistanceError::EpochMismatch {
            train: train.k_epochs(),
            target: target_row.len(),
        });
    }
    match kind {
        DistanceKind::Longitudinal => {
            let k = train.k_epochs() as f64;
            let values: Vec<f64> = (0..train.n_instances())
                .into_par_iter()
                .map(|i| {
                    let d = mismatches(train.row(i), target_row) as f64 / k;
                    match polarity {
                        Polarity::Positive => d,
                        Polarity::Negative => 1.0 - d,
                    }
                })
                .collect();
            let flags = vec![false; values.len()];
            Ok(DistanceVector { kind, polarity, target_index: None, values, flags })
        }
        DistanceKind::StrictLongitudinal => {
            if !train.has_true_labels() {
                return Err(DistanceError::MissingTrueLabels);
            }
            let mask = CorrectnessMask::from_trace(train)?;
            strict_distances_with_mask(train, &mask, target_row, polarity)
        }
    }
}

/// Strict-variant workhorse for callers that reuse one precomputed
/// [`CorrectnessMask`] across many targets. Output is identical to
/// [`distances_to_all`] with [`DistanceKind::StrictLongitudinal`].
pub fn strict_distances_with_mask(
    train: &TraceMatrix,
    mask: &CorrectnessMask,
    target_row: &[Label],
    polarity: Polarity,
) -> Result<DistanceVector, DistanceError> {
    if train.k_epochs() != target_row.len() {
        return Err(DistanceError::EpochMismatch {
            train: train.k_epochs(),
            target: target_row.len(),
        });
    }
    let pairs: Vec<(f64, bool)> = (0..train.n_instances())
        .into_par_iter()
        .map(|i| {
            let (d, flagged) = strict_pair(train.row(i), mask.row(i), target_row);
            let d = match (polarity, flagged) {
                (Polarity::Positive, _) => d,
                // Zero-weight rows stay maximal under either polarity.
                (Polarity::Negative, true) => d,
                (Polarity::Negative, false) => 1.0 - d,
            };
            (d, flagged)
        })
        .collect();
    let (values, flags) = pairs.into_iter().unzip();
    Ok(DistanceVector {
        kind: DistanceKind::StrictLongitudinal,
        polarity,
        target_index: None,
        values,
        flags,
    })
}

fn strict_pair(train_row: &[Label], weights: &[u8], target_row: &[Label]) -> (f64, bool) {
    let mut correct_epochs = 0usize;
    let mut weighted_mismatches = 0usize;
    for ((&a, &w), &b) in train_row.iter().zip(weights).zip(target_row) {
        correct_epochs += w as usize;
        weighted_mismatches += (w == 1 && a != b) as usize;
    }
    if correct_epochs == 0 {
        (1.0, true)
    } else {
        (weighted_mismatches as f64 / correct_epochs as f64, false)
    }
}

/// Selects the explainer set: the minimum distance and every training
/// instance within `epsilon` (plus [`MEMBERSHIP_SLACK`]) of it.
pub fn explainer_set(dv: &DistanceVector, epsilon: f64) -> Result<ExplainerResult, DistanceError> {
    if dv.values.is_empty() {
        return Err(DistanceError::EmptyDistanceVector);
    }
    if !(epsilon.is_finite() && epsilon >= 0.0) {
        return Err(DistanceError::BadEpsilon(epsilon));
    }
    let explainer_distance = dv.values.iter().cloned().fold(f64::INFINITY, f64::min);
    let threshold = explainer_distance + epsilon + MEMBERSHIP_SLACK;
    let member_indices: Vec<usize> = dv
        .values
        .iter()
        .enumerate()
        .filter(|(_, &v)| v <= threshold)
        .map(|(i, _)| i)
        .collect();
    let flagged_members =
        member_indices.iter().copied().filter(|&i| dv.flags[i]).collect();
    Ok(ExplainerResult {
        kind: dv.kind,
        polarity: dv.polarity,
        explainer_distance,
        epsilon,
        member_indices,
        flagged_members,
        n_train: dv.values.len(),
    })
}

/// Combines a positive and a negative explainer set into one tagged list,
/// ordered by index. An index present in both keeps both tags.
pub fn explainer_union(
    positive: &ExplainerResult,
    negative: &ExplainerResult,
) -> Result<Vec<TaggedMember>, DistanceError> {
    if positive.polarity == negative.polarity {
        return Err(DistanceError::DuplicatePolarity(positive.polarity));
    }
    let (positive, negative) = match positive.polarity {
        Polarity::Positive => (positive, negative),
        Polarity::Negative => (negative, positive),
    };
    if positive.n_train != negative.n_train {
        return Err(DistanceError::TrainSizeMismatch {
            positive: positive.n_train,
            negative: negative.n_train,
        });
    }
    let mut members: Vec<TaggedMember> = positive
        .member_indices
        .iter()
        .map(|&index| TaggedMember { index, polarity: Polarity::Positive })
        .chain(
            negative
                .member_indices
                .iter()
                .map(|&index| TaggedMember { index, polarity: Polarity::Negative }),
        )
        .collect();
    members.sort_by_key(|m| (m.index, m.polarity == Polarity::Negative));
    Ok(members)
}

/// Writes a distance vector as CSV with header `train_index,distance,flag`.
pub fn write_distances_csv<W: Write>(dv: &DistanceVector, mut dest: W) -> Result<(), DistanceError> {
    writeln!(dest, "train_index,distance,flag")?;
    for (i, (v, f)) in dv.values.iter().zip(&dv.flags).enumerate() {
        writeln!(dest, "{i},{v},{}", u8::from(*f))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn longitudinal_examples() {
        assert_eq!(longitudinal(&[3, 1, 4], &[3, 1, 4]).unwrap(), 0.0);
        assert_eq!(longitudinal(&[1, 1, 2, 2], &[1, 2, 2, 2]).unwrap(), 0.25);
        assert_eq!(longitudinal(&[0, 0, 0], &[1, 2, 3]).unwrap(), 1.0);
        assert!(matches!(
            longitudinal(&[1, 2], &[1, 2, 3]).unwrap_err(),
            DistanceError::LengthMismatch { left: 2, right: 3 }
        ));
        assert!(matches!(longitudinal(&[], &[]).unwrap_err(), DistanceError::EmptyRows));
    }

    #[test]
    fn negative_examples() {
        assert_eq!(negative_longitudinal(&[5, 5], &[5, 5]).unwrap(), 1.0);
        assert_eq!(negative_longitudinal(&[1, 1, 2, 2], &[1, 2, 2, 2]).unwrap(), 0.75);
    }

    #[test]
    fn strict_example_from_weighted_epochs() {
        // Training row [0,1,1,1] with true label 1 gives weights [0,1,1,1];
        // against [0,1,1,0] the correct epochs hold one mismatch of three.
        let (d, flagged) = strict_longitudinal(&[0, 1, 1, 1], &[0, 1, 1, 1], &[0, 1, 1, 0]).unwrap();
        assert_eq!(d, 1.0 / 3.0);
        assert!(!flagged);
    }

    #[test]
    fn strict_reduces_to_longitudinal_under_all_ones() {
        let a = [0, 1, 2, 3, 4, 1, 1];
        let b = [0, 2, 2, 3, 0, 1, 2];
        let (d, flagged) = strict_longitudinal(&a, &[1; 7], &b).unwrap();
        assert_eq!(d, longitudinal(&a, &b).unwrap());
        assert!(!flagged);
    }

    #[test]
    fn strict_zero_weight_convention() {
        let (d, flagged) = strict_longitudinal(&[0, 1], &[0, 0], &[0, 1]).unwrap();
        assert_eq!(d, 1.0);
        assert!(flagged);
    }

    #[test]
    fn strict_rejects_non_binary_weights() {
        assert!(matches!(
            strict_longitudinal(&[0, 1], &[0, 2], &[0, 1]).unwrap_err(),
            DistanceError::NonBinaryWeight { epoch: 1, value: 2 }
        ));
    }

    #[test]
    fn strict_asymmetry_witness() {
        // A: predictions [0,1], true label 0 → weights [1,0].
        // B: predictions [0,0], true label 0 → weights [1,1].
        let a = [0, 1];
        let w_a = [1, 0];
        let b = [0, 0];
        let w_b = [1, 1];
        let (d_ab, _) = strict_longitudinal(&a, &w_a, &b).unwrap();
        let (d_ba, _) = strict_longitudinal(&b, &w_b, &a).unwrap();
        assert_eq!(d_ab, 0.0);
        assert_eq!(d_ba, 0.5);
    }

    fn train_trace() -> TraceMatrix {
        TraceMatrix::new(
            vec![vec![0, 1, 1], vec![1, 1, 1], vec![2, 0, 1]],
            Some(vec![1, 1, 0]),
            3,
        )
        .unwrap()
    }

    #[test]
    fn distances_to_all_basics() {
        let train = train_trace();
        let dv = distances_to_all(&train, &[1, 1, 1], DistanceKind::Longitudinal, Polarity::Positive)
            .unwrap();
        assert_eq!(dv.values.len(), 3);
        assert_eq!(dv.values[1], 0.0);
        assert_eq!(dv.values[0], 1.0 / 3.0);
        let neg =
            distances_to_all(&train, &[1, 1, 1], DistanceKind::Longitudinal, Polarity::Negative)
                .unwrap();
        for (p, n) in dv.values.iter().zip(&neg.values) {
            assert_eq!(p + n, 1.0);
            assert_eq!(*n, 1.0 - p);
        }
    }

    #[test]
    fn distances_to_all_epoch_mismatch() {
        let train = train_trace();
        assert!(matches!(
            distances_to_all(&train, &[1, 1], DistanceKind::Longitudinal, Polarity::Positive)
                .unwrap_err(),
            DistanceError::EpochMismatch { train: 3, target: 2 }
        ));
    }

    #[test]
    fn strict_requires_true_labels() {
        let train = TraceMatrix::new(vec![vec![0, 1]], None, 2).unwrap();
        assert!(matches!(
            distances_to_all(&train, &[0, 1], DistanceKind::StrictLongitudinal, Polarity::Positive)
                .unwrap_err(),
            DistanceError::MissingTrueLabels
        ));
    }

    #[test]
    fn explainer_set_exact_minimum() {
        let dv = DistanceVector {
            kind: DistanceKind::Longitudinal,
            polarity: Polarity::Positive,
            target_index: None,
            values: vec![0.2, 0.0, 0.0, 0.4],
            flags: vec![false; 4],
        };
        let result = explainer_set(&dv, 0.0).unwrap();
        assert_eq!(result.explainer_distance, 0.0);
        assert_eq!(result.member_indices, vec![1, 2]);
    }

    #[test]
    fn explainer_set_with_epsilon() {
        let dv = DistanceVector {
            kind: DistanceKind::Longitudinal,
            polarity: Polarity::Positive,
            target_index: None,
            values: vec![0.20, 0.21, 0.35],
            flags: vec![false; 3],
        };
        let result = explainer_set(&dv, 0.02).unwrap();
        assert_eq!(result.member_indices, vec![0, 1]);
    }

    #[test]
    fn explainer_set_singleton_and_empty() {
        let dv = DistanceVector {
            kind: DistanceKind::Longitudinal,
            polarity: Polarity::Positive,
            target_index: None,
            values: vec![0.7],
            flags: vec![false],
        };
        assert_eq!(explainer_set(&dv, 0.0).unwrap().member_indices, vec![0]);
        let empty = DistanceVector { values: vec![], flags: vec![], ..dv };
        assert!(matches!(
            explainer_set(&empty, 0.0).unwrap_err(),
            DistanceError::EmptyDistanceVector
        ));
    }

    fn result_with(polarity: Polarity, members: Vec<usize>, n_train: usize) -> ExplainerResult {
        ExplainerResult {
            kind: DistanceKind::Longitudinal,
            polarity,
            explainer_distance: 0.0,
            epsilon: 0.0,
            member_indices: members,
            flagged_members: vec![],
            n_train,
        }
    }

    #[test]
    fn union_of_disjoint_sets() {
        let pos = result_with(Polarity::Positive, vec![1, 2], 10);
        let neg = result_with(Polarity::Negative, vec![7], 10);
        let union = explainer_union(&pos, &neg).unwrap();
        assert_eq!(
            union,
            vec![
                TaggedMember { index: 1, polarity: Polarity::Positive },
                TaggedMember { index: 2, polarity: Polarity::Positive },
                TaggedMember { index: 7, polarity: Polarity::Negative },
            ]
        );
    }

    #[test]
    fn union_keeps_both_tags_on_overlap() {
        // Target [0,1] against rows at distances 0, 1, and 0.5: with
        // epsilon 0.5 the middle row qualifies under both polarities.
        let train = TraceMatrix::new(
            vec![vec![0, 1], vec![1, 0], vec![0, 0]],
            Some(vec![0, 0, 0]),
            2,
        )
        .unwrap();
        let target = [0, 1];
        let pos =
            distances_to_all(&train, &target, DistanceKind::Longitudinal, Polarity::Positive)
                .unwrap();
        let neg =
            distances_to_all(&train, &target, DistanceKind::Longitudinal, Polarity::Negative)
                .unwrap();
        let pos_set = explainer_set(&pos, 0.5).unwrap();
        let neg_set = explainer_set(&neg, 0.5).unwrap();
        assert_eq!(pos_set.member_indices, vec![0, 2]);
        assert_eq!(neg_set.member_indices, vec![1, 2]);
        let union = explainer_union(&pos_set, &neg_set).unwrap();
        let tags_for_2: Vec<Polarity> =
            union.iter().filter(|m| m.index == 2).map(|m| m.polarity).collect();
        assert_eq!(tags_for_2, vec![Polarity::Positive, Polarity::Negative]);
    }

    #[test]
    fn union_rejects_mismatched_sizes() {
        let pos = result_with(Polarity::Positive, vec![0], 5);
        let neg = result_with(Polarity::Negative, vec![0], 6);
        assert!(matches!(
            explainer_union(&pos, &neg).unwrap_err(),
            DistanceError::TrainSizeMismatch { positive: 5, negative: 6 }
        ));
    }

    #[test]
    fn distance_csv_format() {
        let dv = DistanceVector {
            kind: DistanceKind::StrictLongitudinal,
            polarity: Polarity::Positive,
            target_index: Some(0),
            values: vec![0.25, 1.0],
            flags: vec![false, true],
        };
        let mut buf = Vec::new();
        write_distances_csv(&dv, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "train_index,distance,flag\n0,0.25,0\n1,1,1\n");
    }
}

//! Image-level decision by majority vote over patch labels.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classify::ClassLabel;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AggregateError {
    #[error("cannot vote over an empty set of patch labels")]
    EmptyVote,
}

/// Per-class vote tally, indexed like [`ClassLabel::ALL`]. Serialised as a
/// map from class name to count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct VoteCounts {
    pub normal: usize,
    pub benign: usize,
    pub in_situ: usize,
    pub invasive: usize,
}

impl VoteCounts {
    pub fn from_labels(labels: &[ClassLabel]) -> Self {
        let mut c = Self::default();
        for &l in labels {
            *c.get_mut(l) += 1;
        }
        c
    }

    pub fn get(&self, label: ClassLabel) -> usize {
        match label {
            ClassLabel::Normal => self.normal,
            ClassLabel::Benign => self.benign,
            ClassLabel::InSitu => self.in_situ,
            ClassLabel::Invasive => self.invasive,
        }
    }

    fn get_mut(&mut self, label: ClassLabel) -> &mut usize {
        match label {
            ClassLabel::Normal => &mut self.normal,
            ClassLabel::Benign => &mut self.benign,
            ClassLabel::InSitu => &mut self.in_situ,
            ClassLabel::Invasive => &mut self.invasive,
        }
    }

    pub fn total(&self) -> usize {
        ClassLabel::ALL.iter().map(|&l| self.get(l)).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageDecision {
    pub label: ClassLabel,
    pub vote_counts: VoteCounts,
    pub n_patches: usize,
    /// More than one class reached the top count.
    pub tie_broken: bool,
}

/// Most frequent label; ties go to the most dangerous of the tied classes
/// (invasive, then in situ, then benign, then normal).
pub fn majority_vote(labels: &[ClassLabel]) -> Result<ImageDecision, AggregateError> {
    if labels.is_empty() {
        return Err(AggregateError::EmptyVote);
    }
    let counts = VoteCounts::from_labels(labels);
    let top = ClassLabel::ALL
        .iter()
        .map(|&l| counts.get(l))
        .max()
        .unwrap_or(0);
    let mut winners = ClassLabel::BY_PRECEDENCE
        .into_iter()
        .filter(|&l| counts.get(l) == top);
    let label = winners.next().expect("some class holds the maximum");
    let tie_broken = winners.next().is_some();
    Ok(ImageDecision {
        label,
        vote_counts: counts,
        n_patches: labels.len(),
        tie_broken,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use ClassLabel::*;

    #[test]
    fn strict_majority() {
        let d = majority_vote(&[Invasive, Invasive, Normal]).unwrap();
        assert_eq!(d.label, Invasive);
        assert!(!d.tie_broken);
        assert_eq!(d.n_patches, 3);
        assert_eq!(d.vote_counts.total(), 3);
    }

    #[test]
    fn benign_beats_normal_on_a_tie() {
        let d = majority_vote(&[Normal, Benign]).unwrap();
        assert_eq!(d.label, Benign);
        assert!(d.tie_broken);
    }

    #[test]
    fn four_way_tie_goes_to_invasive() {
        let d = majority_vote(&[Normal, Benign, InSitu, Invasive]).unwrap();
        assert_eq!(d.label, Invasive);
        assert!(d.tie_broken);
    }

    #[test]
    fn partial_tie_uses_restricted_precedence() {
        let d = majority_vote(&[Normal, InSitu, Normal, InSitu, Invasive]).unwrap();
        assert_eq!(d.label, InSitu);
        assert!(d.tie_broken);
    }

    #[test]
    fn empty_vote_is_an_error() {
        assert_eq!(majority_vote(&[]), Err(AggregateError::EmptyVote));
    }

    #[test]
    fn counts_serialise_as_named_map() {
        let d = majority_vote(&[InSitu]).unwrap();
        let v = serde_json::to_value(d.vote_counts).unwrap();
        assert_eq!(v["in_situ"], 1);
        assert_eq!(v["normal"], 0);
    }

    fn labels() -> impl Strategy<Value = Vec<ClassLabel>> {
        proptest::collection::vec(proptest::sample::select(ClassLabel::ALL.to_vec()), 1..40)
    }

    proptest! {
        #[test]
        fn permutation_invariant(mut v in labels(), seed in any::<u64>()) {
            let before = majority_vote(&v).unwrap();
            // deterministic shuffle
            let n = v.len();
            let mut s = seed;
            for i in (1..n).rev() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                v.swap(i, (s >> 33) as usize % (i + 1));
            }
            prop_assert_eq!(majority_vote(&v).unwrap(), before);
        }

        #[test]
        fn adding_the_winner_keeps_it(mut v in labels()) {
            let w = majority_vote(&v).unwrap().label;
            v.push(w);
            let after = majority_vote(&v).unwrap();
            prop_assert_eq!(after.label, w);
            prop_assert!(!after.tie_broken);
        }
    }
}

//! Threshold-free OOD evaluation: AUROC, TNR at 95% TPR and best detection
//! accuracy. Label 1 (OOD) is the positive class and higher scores mean
//! "more OOD".

use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::{Error, Result};

/// Scores with binary labels (1 = OOD = positive).
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredSet {
    pub scores: Vec<f64>,
    pub labels: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub auroc: f64,
    pub tnr95: f64,
    pub acc: f64,
    /// `(fpr, tpr)` from `(0, 0)` to `(1, 1)`, one point per distinct score.
    pub roc_points: Vec<(f64, f64)>,
    pub positives: usize,
    pub negatives: usize,
}

impl ScoredSet {
    pub fn new(scores: Vec<f64>, labels: Vec<u8>) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::invalid(alloc::format!("{} scores for {} labels", scores.len(), labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l > 1) {
            return Err(Error::invalid(alloc::format!("label {bad} is not 0/1")));
        }
        if scores.iter().any(|s| s.is_nan()) {
            return Err(Error::NonFinite("scores".into()));
        }
        Ok(ScoredSet { scores, labels })
    }

    /// Concatenates negative (ID) and positive (OOD) scores.
    pub fn from_groups(id_scores: &[f64], ood_scores: &[f64]) -> Result<Self> {
        let mut scores = id_scores.to_vec();
        scores.extend_from_slice(ood_scores);
        let mut labels = alloc::vec![0u8; id_scores.len()];
        labels.resize(scores.len(), 1);
        Self::new(scores, labels)
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn counts(&self) -> (usize, usize) {
        let pos = self.labels.iter().filter(|&&l| l == 1).count();
        (pos, self.labels.len() - pos)
    }

    fn require_both(&self) -> Result<(usize, usize)> {
        let (pos, neg) = self.counts();
        match (pos, neg) {
            (0, _) => Err(Error::SingleClass(0)),
            (_, 0) => Err(Error::SingleClass(1)),
            _ => Ok((pos, neg)),
        }
    }

    /// Groups of tied scores in descending order, each as
    /// `(score, positives, negatives)`.
    fn descending_groups(&self) -> Vec<(f64, usize, usize)> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.sort_by(|&a, &b| self.scores[b].partial_cmp(&self.scores[a]).unwrap_or(Ordering::Equal));
        let mut groups: Vec<(f64, usize, usize)> = Vec::new();
        for i in idx {
            let s = self.scores[i];
            let pos = self.labels[i] == 1;
            match groups.last_mut() {
                Some(g) if g.0 == s => {
                    if pos {
                        g.1 += 1
                    } else {
                        g.2 += 1
                    }
                }
                _ => groups.push((s, pos as usize, (!pos) as usize)),
            }
        }
        groups
    }
}

/// Mann–Whitney AUROC: `P(s⁺ > s⁻) + ½·P(s⁺ = s⁻)`.
pub fn auroc(set: &ScoredSet) -> Result<f64> {
    let (pos, neg) = set.require_both()?;
    // Walk groups from the top; every positive in a group beats the negatives
    // strictly below it and ties with the negatives inside it. Counted in
    // half-units to stay in integers.
    let groups = set.descending_groups();
    let mut neg_below = neg;
    let mut twice_wins: u128 = 0;
    for &(_, p, n) in &groups {
        neg_below -= n;
        twice_wins += p as u128 * (2 * neg_below + n) as u128;
    }
    Ok(twice_wins as f64 / (2 * pos as u128 * neg as u128) as f64)
}

/// TNR at the most stringent threshold `t` (predict OOD iff `score ≥ t`)
/// whose TPR reaches 95%. Step convention, no interpolation.
pub fn tnr_at_tpr95(set: &ScoredSet) -> Result<f64> {
    tnr_at_tpr(set, 95, 100)
}

/// TNR at the first descending threshold with `TPR ≥ num/den`.
pub fn tnr_at_tpr(set: &ScoredSet, num: usize, den: usize) -> Result<f64> {
    let (pos, neg) = set.require_both()?;
    let (mut tp, mut fp) = (0usize, 0usize);
    for (_, p, n) in set.descending_groups() {
        tp += p;
        fp += n;
        if tp * den >= num * pos {
            return Ok((neg - fp) as f64 / neg as f64);
        }
    }
    unreachable!("the lowest threshold admits every positive")
}

/// Best accuracy over all thresholds, candidates being the midpoints
/// between consecutive distinct scores plus ±∞ (predict OOD iff
/// `score > t`).
pub fn detection_accuracy(set: &ScoredSet) -> Result<f64> {
    let (pos, _) = set.require_both()?;
    let n = set.len();
    // Threshold +∞: everything predicted ID.
    let (mut tp, mut tn_lost) = (0usize, 0usize);
    let neg = n - pos;
    let mut best = neg;
    for (_, p, q) in set.descending_groups() {
        tp += p;
        tn_lost += q;
        best = best.max(tp + neg - tn_lost);
    }
    Ok(best as f64 / n as f64)
}

/// `(fpr, tpr)` points for thresholds at every distinct score.
pub fn roc_points(set: &ScoredSet) -> Result<Vec<(f64, f64)>> {
    let (pos, neg) = set.require_both()?;
    let mut pts = alloc::vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    for (_, p, n) in set.descending_groups() {
        tp += p;
        fp += n;
        pts.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
    }
    Ok(pts)
}

pub fn evaluate(set: &ScoredSet) -> Result<EvalReport> {
    let (positives, negatives) = set.require_both()?;
    Ok(EvalReport {
        auroc: auroc(set)?,
        tnr95: tnr_at_tpr95(set)?,
        acc: detection_accuracy(set)?,
        roc_points: roc_points(set)?,
        positives,
        negatives,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn set(scores: &[f64], labels: &[u8]) -> ScoredSet {
        ScoredSet::new(scores.to_vec(), labels.to_vec()).unwrap()
    }

    #[test]
    fn perfect_separation() {
        let s = set(&[0.0, 1.0, 2.0, 3.0], &[0, 0, 1, 1]);
        assert_eq!(auroc(&s).unwrap(), 1.0);
        assert_eq!(tnr_at_tpr95(&s).unwrap(), 1.0);
        assert_eq!(detection_accuracy(&s).unwrap(), 1.0);
    }

    #[test]
    fn all_ties() {
        let s = set(&[0.3; 6], &[0, 1, 0, 1, 0, 1]);
        assert_eq!(auroc(&s).unwrap(), 0.5);
        assert_eq!(detection_accuracy(&s).unwrap(), 0.5);
        assert_eq!(tnr_at_tpr95(&s).unwrap(), 0.0);
    }

    #[test]
    fn single_class_is_an_error() {
        let s = set(&[0.1, 0.2], &[1, 1]);
        assert!(matches!(auroc(&s), Err(Error::SingleClass(_))));
        assert!(tnr_at_tpr95(&s).is_err());
        assert!(detection_accuracy(&s).is_err());
    }

    #[test]
    fn twenty_positives_pass_nineteen() {
        // Positives 1..=20, negatives interleaved at half-steps.
        let mut scores = vec![];
        let mut labels = vec![];
        for i in 1..=20 {
            scores.push(i as f64);
            labels.push(1);
            scores.push(i as f64 + 0.5);
            labels.push(0);
        }
        let s = set(&scores, &labels);
        // 19 positives pass at t = 2.0; negatives ≥ 2.0 are 1.5 excluded → 19 of 20 negatives are above.
        assert_eq!(tnr_at_tpr95(&s).unwrap(), 1.0 / 20.0);
    }

    #[test]
    fn roc_runs_corner_to_corner() {
        let s = set(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1]);
        let pts = roc_points(&s).unwrap();
        assert_eq!(pts.first(), Some(&(0.0, 0.0)));
        assert_eq!(pts.last(), Some(&(1.0, 1.0)));
        assert!(pts.windows(2).all(|w| w[0].0 <= w[1].0 && w[0].1 <= w[1].1));
        assert_eq!(auroc(&s).unwrap(), 0.75);
    }
}

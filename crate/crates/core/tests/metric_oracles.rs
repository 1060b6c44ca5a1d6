//! Metric implementations against brute-force oracles.

use nmd_core::metrics::{auroc, detection_accuracy, evaluate, tnr_at_tpr95, ScoredSet};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// O(n²) pairwise count.
fn pairwise_auroc(s: &ScoredSet) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &si) in s.scores.iter().enumerate() {
        if s.labels[i] != 1 {
            continue;
        }
        for (j, &sj) in s.scores.iter().enumerate() {
            if s.labels[j] != 0 {
                continue;
            }
            pairs += 1.0;
            if si > sj {
                wins += 1.0;
            } else if si == sj {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

/// Every candidate threshold `t ∈ scores`, counting positives/negatives
/// with `score ≥ t` directly.
fn scan_tnr95(s: &ScoredSet) -> f64 {
    let pos = s.labels.iter().filter(|&&l| l == 1).count();
    let neg = s.len() - pos;
    let mut cands = s.scores.clone();
    cands.sort_by(|a, b| b.partial_cmp(a).unwrap());
    for t in cands {
        let tp = (0..s.len()).filter(|&i| s.labels[i] == 1 && s.scores[i] >= t).count();
        if tp as f64 / pos as f64 >= 0.95 - 1e-12 {
            let tn = (0..s.len()).filter(|&i| s.labels[i] == 0 && s.scores[i] < t).count();
            return tn as f64 / neg as f64;
        }
    }
    unreachable!()
}

/// Midpoints between distinct sorted scores plus ±∞.
fn scan_accuracy(s: &ScoredSet) -> f64 {
    let mut distinct = s.scores.clone();
    distinct.sort_by(|a, b| a.partial_cmp(b).unwrap());
    distinct.dedup();
    let mut cands = vec![f64::NEG_INFINITY, f64::INFINITY];
    cands.extend(distinct.windows(2).map(|w| 0.5 * (w[0] + w[1])));
    let mut best = 0usize;
    for t in cands {
        let correct = (0..s.len()).filter(|&i| (s.scores[i] > t) == (s.labels[i] == 1)).count();
        best = best.max(correct);
    }
    best as f64 / s.len() as f64
}

fn random_set(rng: &mut ChaCha8Rng, n: usize, quantize: bool) -> ScoredSet {
    loop {
        let labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
        let scores: Vec<f64> = labels
            .iter()
            .map(|&l| {
                let v: f64 = rng.random::<f64>() + 0.3 * l as f64;
                if quantize {
                    (v * 8.0).round() / 8.0
                } else {
                    v
                }
            })
            .collect();
        if labels.contains(&0) && labels.contains(&1) {
            return ScoredSet::new(scores, labels).unwrap();
        }
    }
}

#[test]
fn auroc_equals_pairwise_oracle_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for k in 0..200 {
        let s = random_set(&mut rng, 50, k % 2 == 0);
        assert_eq!(auroc(&s).unwrap(), pairwise_auroc(&s));
    }
}

#[test]
fn tnr95_and_accuracy_equal_threshold_scans() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for k in 0..200 {
        let s = random_set(&mut rng, 50, k % 3 == 0);
        assert_eq!(tnr_at_tpr95(&s).unwrap(), scan_tnr95(&s));
        assert_eq!(detection_accuracy(&s).unwrap(), scan_accuracy(&s));
    }
}

#[test]
fn tnr95_is_five_percent_when_labels_ignore_scores() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 100_000;
    let scores: Vec<f64> = (0..n).map(|_| rng.random()).collect();
    let labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
    let tnr = tnr_at_tpr95(&ScoredSet::new(scores, labels).unwrap()).unwrap();
    assert!((tnr - 0.05).abs() <= 0.01, "tnr {tnr}");
}

fn arb_set() -> impl Strategy<Value = ScoredSet> {
    (4usize..40).prop_flat_map(|n| {
        (prop::collection::vec(-100i32..100, n), prop::collection::vec(0u8..2, n)).prop_filter_map(
            "both classes",
            |(s, l)| {
                (l.contains(&0) && l.contains(&1))
                    .then(|| ScoredSet::new(s.into_iter().map(|v| v as f64 / 10.0).collect(), l).unwrap())
            },
        )
    })
}

proptest! {
    #[test]
    fn metrics_invariant_under_increasing_transforms(s in arb_set()) {
        let t = ScoredSet::new(s.scores.iter().map(|&v| (v * 0.7).exp() + 3.0).collect(), s.labels.clone()).unwrap();
        let (a, b) = (evaluate(&s).unwrap(), evaluate(&t).unwrap());
        prop_assert_eq!(a.auroc, b.auroc);
        prop_assert_eq!(a.tnr95, b.tnr95);
        prop_assert_eq!(a.acc, b.acc);
    }

    #[test]
    fn swapping_labels_complements_auroc(s in arb_set()) {
        let flipped = ScoredSet::new(s.scores.clone(), s.labels.iter().map(|l| 1 - l).collect()).unwrap();
        prop_assert!((auroc(&s).unwrap() + auroc(&flipped).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn negating_untied_scores_complements_auroc(n in 4usize..40, seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = random_set(&mut rng, n, false);
        let neg = ScoredSet::new(s.scores.iter().map(|v| -v).collect(), s.labels.clone()).unwrap();
        prop_assert!((auroc(&s).unwrap() + auroc(&neg).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn roc_points_are_monotone(s in arb_set()) {
        let pts = evaluate(&s).unwrap().roc_points;
        prop_assert_eq!(pts[0], (0.0, 0.0));
        prop_assert_eq!(*pts.last().unwrap(), (1.0, 1.0));
        prop_assert!(pts.windows(2).all(|w| w[0].0 <= w[1].0 && w[0].1 <= w[1].1));
    }
}

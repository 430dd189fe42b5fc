use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn class_counts(scores: &[f64], labels: &[bool]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::invalid(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(s) = scores.iter().find(|s| s.is_nan()) {
        return Err(Error::invalid(format!("score {s} is not a number")));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric(format!(
            "need both classes, got {pos} positive and {neg} negative"
        )));
    }
    Ok((pos, neg))
}

/// Area under the ROC curve: the probability that a random positive outranks a random
/// negative, ties counted as one half. Computed from mid-ranks in `O(n log n)`.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, neg) = class_counts(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // twice the Mann-Whitney U statistic, kept integral
    let mut u2: u128 = 0;
    let mut negatives_below = 0u128;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let tied_pos = order[i..j].iter().filter(|&&k| labels[k]).count() as u128;
        let tied_neg = (j - i) as u128 - tied_pos;
        u2 += tied_pos * (2 * negatives_below + tied_neg);
        negatives_below += tied_neg;
        i = j;
    }
    Ok(u2 as f64 / (2 * pos * neg) as f64)
}

/// Confusion rates at one decision threshold (`score >= threshold` is called positive).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    /// `None` stands for `+∞`, i.e. nothing is called positive.
    pub threshold: Option<f64>,
    pub sensitivity: f64,
    pub specificity: f64,
}

/// Rates of the rule `score >= threshold` on the given data.
pub fn rates_at_threshold(scores: &[f64], labels: &[bool], threshold: Option<f64>) -> Result<OperatingPoint> {
    let (pos, neg) = class_counts(scores, labels)?;
    let called = |s: f64| threshold.is_some_and(|t| s >= t);
    let tp = scores.iter().zip(labels).filter(|(&s, &l)| l && called(s)).count();
    let tn = scores.iter().zip(labels).filter(|(&s, &l)| !l && !called(s)).count();
    Ok(OperatingPoint {
        threshold,
        sensitivity: tp as f64 / pos as f64,
        specificity: tn as f64 / neg as f64,
    })
}

/// Most sensitive threshold among the observed scores and `+∞` whose specificity is at least
/// `target`.
pub fn threshold_at_specificity(scores: &[f64], labels: &[bool], target: f64) -> Result<OperatingPoint> {
    let (pos, neg) = class_counts(scores, labels)?;
    if !(0.0..=1.0).contains(&target) {
        return Err(Error::invalid(format!("target specificity {target} outside [0, 1]")));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Specificity grows and sensitivity shrinks with the threshold, so the answer is the
    // smallest candidate meeting the target.
    let mut neg_below = 0;
    let mut pos_below = 0;
    let mut i = 0;
    while i < order.len() {
        let tau = scores[order[i]];
        let specificity = neg_below as f64 / neg as f64;
        if specificity >= target {
            return Ok(OperatingPoint {
                threshold: Some(tau),
                sensitivity: (pos - pos_below) as f64 / pos as f64,
                specificity,
            });
        }
        while i < order.len() && scores[order[i]] == tau {
            if labels[order[i]] {
                pos_below += 1;
            } else {
                neg_below += 1;
            }
            i += 1;
        }
    }
    Ok(OperatingPoint {
        threshold: None,
        sensitivity: 0.0,
        specificity: 1.0,
    })
}

/// Maximum sensitivity subject to specificity `>= target`.
pub fn sensitivity_at_specificity(scores: &[f64], labels: &[bool], target: f64) -> Result<f64> {
    Ok(threshold_at_specificity(scores, labels, target)?.sensitivity)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pair_count(scores: &[f64], labels: &[bool]) -> f64 {
        let mut twice = 0u64;
        let (mut p, mut n) = (0u64, 0u64);
        for (i, &li) in labels.iter().enumerate() {
            if li {
                p += 1;
            } else {
                n += 1;
            }
            for (j, &lj) in labels.iter().enumerate() {
                if li && !lj {
                    if scores[i] > scores[j] {
                        twice += 2;
                    } else if scores[i] == scores[j] {
                        twice += 1;
                    }
                }
            }
        }
        twice as f64 / (2 * p * n) as f64
    }

    fn sweep(scores: &[f64], labels: &[bool], target: f64) -> f64 {
        let pos = labels.iter().filter(|&&l| l).count();
        let neg = labels.len() - pos;
        let mut candidates: Vec<f64> = scores.to_vec();
        candidates.push(f64::INFINITY);
        let mut best = 0.0f64;
        for &t in &candidates {
            let tp = scores.iter().zip(labels).filter(|(&s, &l)| l && s >= t).count();
            let tn = scores.iter().zip(labels).filter(|(&s, &l)| !l && s < t).count();
            if tn as f64 / neg as f64 >= target {
                best = best.max(tp as f64 / pos as f64);
            }
        }
        best
    }

    #[test]
    fn auroc_examples() {
        let s = [0.9, 0.8, 0.2, 0.1];
        assert_eq!(auroc(&s, &[true, true, false, false]).unwrap(), 1.0);
        assert_eq!(auroc(&s, &[true, false, true, false]).unwrap(), 0.75);
        assert_eq!(auroc(&[0.3; 6], &[true, false, true, false, false, true]).unwrap(), 0.5);
        assert!(matches!(auroc(&s, &[true; 4]), Err(Error::UndefinedMetric(_))));
        assert!(auroc(&s, &[true, false]).is_err());
    }

    #[test]
    fn sensitivity_examples() {
        let s = [0.9, 0.4, 0.6, 0.1];
        let l = [true, true, false, false];
        assert_eq!(sensitivity_at_specificity(&s, &l, 0.5).unwrap(), 1.0);
        let op = threshold_at_specificity(&s, &l, 0.5).unwrap();
        assert_eq!(op.threshold, Some(0.4));
        assert_eq!(sensitivity_at_specificity(&s, &l, 0.0).unwrap(), 1.0);
        assert_eq!(sensitivity_at_specificity(&s, &l, 1.0).unwrap(), 0.5);
        let sep = [0.9, 0.8, 0.2, 0.1];
        for t in [0.2, 0.4, 0.6, 1.0] {
            assert_eq!(sensitivity_at_specificity(&sep, &[true, true, false, false], t).unwrap(), 1.0);
        }
        assert!(sensitivity_at_specificity(&s, &l, 1.5).is_err());
    }

    #[test]
    fn rates_at_infinite_threshold() {
        let op = rates_at_threshold(&[0.1, 0.9], &[false, true], None).unwrap();
        assert_eq!((op.sensitivity, op.specificity), (0.0, 1.0));
        let op = rates_at_threshold(&[0.1, 0.9], &[false, true], Some(0.5)).unwrap();
        assert_eq!((op.sensitivity, op.specificity), (1.0, 1.0));
    }

    fn instance() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
        (2usize..120).prop_flat_map(|n| {
            (
                proptest::collection::vec((0u8..12).prop_map(|v| v as f64 / 11.0), n),
                proptest::collection::vec(any::<bool>(), n),
            )
        })
        .prop_filter("both classes", |(_, l)| l.iter().any(|&x| x) && l.iter().any(|&x| !x))
    }

    proptest! {
        #[test]
        fn auroc_matches_pair_counting((s, l) in instance()) {
            prop_assert_eq!(auroc(&s, &l).unwrap(), pair_count(&s, &l));
        }

        #[test]
        fn auroc_rank_invariant((s, l) in instance()) {
            let warped: Vec<f64> = s.iter().map(|x| (3.0 * x).exp() - 7.0).collect();
            prop_assert_eq!(auroc(&s, &l).unwrap(), auroc(&warped, &l).unwrap());
        }

        #[test]
        fn sensitivity_matches_sweep((s, l) in instance(), t in 0.0f64..=1.0) {
            prop_assert_eq!(sensitivity_at_specificity(&s, &l, t).unwrap(), sweep(&s, &l, t));
        }

        #[test]
        fn sensitivity_non_increasing((s, l) in instance(), a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(sensitivity_at_specificity(&s, &l, lo).unwrap() >= sensitivity_at_specificity(&s, &l, hi).unwrap());
        }
    }
}

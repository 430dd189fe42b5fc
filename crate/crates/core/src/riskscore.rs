//! Histogram-matched discretization of csPCa probabilities into a 1–5 model risk score.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Thresholds `t1 ≤ t2 ≤ t3 ≤ t4` splitting `[0, 1]` into `[0,t1), [t1,t2), [t2,t3), [t3,t4), [t4,1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskBins {
    pub t1: f64,
    pub t2: f64,
    pub t3: f64,
    pub t4: f64,
    #[serde(default)]
    pub provenance: BinProvenance,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BinProvenance {
    pub n_model_scores: usize,
    pub n_reference_scores: usize,
    /// Reference proportions of grades 1..5.
    pub reference_proportions: Vec<f64>,
    /// Probability threshold reaching the target specificity on the calibration scores, if computed.
    pub operating_threshold: Option<f64>,
    pub operating_specificity: Option<f64>,
    #[serde(default)]
    pub source: String,
}

impl RiskBins {
    pub fn new(thresholds: [f64; 4]) -> Result<Self> {
        let bins = RiskBins {
            t1: thresholds[0],
            t2: thresholds[1],
            t3: thresholds[2],
            t4: thresholds[3],
            provenance: BinProvenance::default(),
        };
        bins.validate()?;
        Ok(bins)
    }

    pub fn thresholds(&self) -> [f64; 4] {
        [self.t1, self.t2, self.t3, self.t4]
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.thresholds();
        if t.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid(format!("risk thresholds {t:?} must lie in [0, 1]")));
        }
        if t.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::invalid(format!("risk thresholds {t:?} must be non-decreasing")));
        }
        Ok(())
    }
}

/// Fits thresholds so the discretized scores follow the reference grade distribution.
///
/// With `k_g = ⌈c_g·n⌉` for the cumulative reference fraction `c_g = P(ref ≤ g)`, `t_g` is the
/// `(k_g + 1)`-th smallest model score, so the `k_g` lowest scores land at grade `g` or below.
/// `k_g = 0` gives `t_g = 0`; `k_g = n` gives a threshold just above every score.
pub fn fit_bins(model_scores: &[f64], reference_scores: &[u8]) -> Result<RiskBins> {
    if model_scores.is_empty() || reference_scores.is_empty() {
        return Err(Error::invalid("histogram matching needs model and reference scores"));
    }
    if let Some(s) = model_scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
        return Err(Error::invalid(format!("model score {s} outside [0, 1]")));
    }
    if let Some(r) = reference_scores.iter().find(|r| !(1..=5).contains(*r)) {
        return Err(Error::invalid(format!("reference score {r} outside 1..5")));
    }
    let mut sorted = model_scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let m = reference_scores.len();
    let mut counts = [0usize; 5];
    for &r in reference_scores {
        counts[usize::from(r) - 1] += 1;
    }
    let sentinel = sorted[n - 1].next_up().min(1.0);
    let mut t = [0.0; 4];
    let mut cumulative = 0;
    for g in 0..4 {
        cumulative += counts[g];
        let k = (cumulative * n).div_ceil(m);
        t[g] = match k {
            0 => 0.0,
            k if k >= n => sentinel,
            k => sorted[k],
        };
    }
    let mut bins = RiskBins::new(t)?;
    bins.provenance = BinProvenance {
        n_model_scores: n,
        n_reference_scores: m,
        reference_proportions: counts.iter().map(|&c| c as f64 / m as f64).collect(),
        ..BinProvenance::default()
    };
    Ok(bins)
}

/// Grade of the left-closed bin containing `score`.
pub fn discretize(score: f64, bins: &RiskBins) -> Result<u8> {
    if !(0.0..=1.0).contains(&score) {
        return Err(Error::invalid(format!("score {score} outside [0, 1]")));
    }
    Ok(1 + bins.thresholds().iter().filter(|&&t| score >= t).count() as u8)
}

pub fn patient_max_score(core_scores: &[u8]) -> Result<u8> {
    core_scores
        .iter()
        .copied()
        .max()
        .ok_or_else(|| Error::invalid("patient has no scored cores"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grades(scores: &[f64], bins: &RiskBins) -> Vec<u8> {
        scores.iter().map(|&s| discretize(s, bins).unwrap()).collect()
    }

    #[test]
    fn uniform_reference_gives_equal_bins() {
        let scores: Vec<f64> = (0..100).map(|i| (i as f64 + 0.5) / 100.0).collect();
        let bins = fit_bins(&scores, &[1, 2, 3, 4, 5]).unwrap();
        let g = grades(&scores, &bins);
        for grade in 1..=5u8 {
            assert_eq!(g.iter().filter(|&&x| x == grade).count(), 20);
        }
        assert_eq!(bins.t1, scores[20]);
        assert_eq!(bins.t4, scores[80]);
    }

    #[test]
    fn degenerate_reference_collapses_to_single_grade() {
        let scores = [0.05, 0.2, 0.7, 0.99];
        let bins = fit_bins(&scores, &[3, 3, 3]).unwrap();
        assert_eq!((bins.t1, bins.t2), (0.0, 0.0));
        assert_eq!(bins.t3, bins.t4);
        assert!(bins.t3 > 0.99);
        assert!(grades(&scores, &bins).iter().all(|&g| g == 3));
    }

    #[test]
    fn small_example_by_rank_enumeration() {
        let bins = fit_bins(&[0.1, 0.3, 0.5, 0.7, 0.9], &[1, 1, 2, 3, 5]).unwrap();
        assert_eq!(grades(&[0.1, 0.3, 0.5, 0.7, 0.9], &bins), vec![1, 1, 2, 3, 5]);
    }

    #[test]
    fn discretize_examples() {
        let bins = RiskBins::new([0.2, 0.4, 0.6, 0.8]).unwrap();
        assert_eq!(discretize(0.0, &bins).unwrap(), 1);
        assert_eq!(discretize(1.0, &bins).unwrap(), 5);
        assert_eq!(discretize(0.4, &bins).unwrap(), 3);
        assert!(discretize(1.2, &bins).is_err());
        assert!(discretize(-0.1, &bins).is_err());
        // brute-force bin search over a fine grid
        for i in 0..=1000 {
            let s = i as f64 / 1000.0;
            let t = bins.thresholds();
            let mut expected = 1;
            for g in 2..=5 {
                if s >= t[g - 2] {
                    expected = g as u8;
                }
            }
            assert_eq!(discretize(s, &bins).unwrap(), expected);
        }
    }

    #[test]
    fn invalid_bins_and_inputs() {
        assert!(RiskBins::new([0.5, 0.4, 0.6, 0.8]).is_err());
        assert!(fit_bins(&[], &[1]).is_err());
        assert!(fit_bins(&[0.5], &[]).is_err());
        assert!(fit_bins(&[0.5], &[6]).is_err());
        assert!(patient_max_score(&[]).is_err());
        assert_eq!(patient_max_score(&[1, 3, 5]).unwrap(), 5);
        assert_eq!(patient_max_score(&[2]).unwrap(), 2);
    }

    proptest! {
        #[test]
        fn discretize_is_monotone(a in 0.0f64..=1.0, b in 0.0f64..=1.0, mut t in proptest::array::uniform4(0.0f64..=1.0)) {
            t.sort_by(f64::total_cmp);
            let bins = RiskBins::new(t).unwrap();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(discretize(lo, &bins).unwrap() <= discretize(hi, &bins).unwrap());
        }

        #[test]
        fn grades_depend_only_on_ranks(scores in proptest::collection::vec(0.0f64..1.0, 5..60),
                                       refs in proptest::collection::vec(1u8..=5, 1..40)) {
            let bins = fit_bins(&scores, &refs).unwrap();
            let g = grades(&scores, &bins);
            // strictly increasing transform that stays inside [0, 1]
            let warped: Vec<f64> = scores.iter().map(|s| s * s * 0.5 + s * 0.25).collect();
            let wbins = fit_bins(&warped, &refs).unwrap();
            prop_assert_eq!(g, grades(&warped, &wbins));
        }

        #[test]
        fn patient_max_matches_brute_force(v in proptest::collection::vec(1u8..=5, 1..30)) {
            let mut best = v[0];
            for &x in &v { if x > best { best = x; } }
            prop_assert_eq!(patient_max_score(&v).unwrap(), best);
        }
    }
}

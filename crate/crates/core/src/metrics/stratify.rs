use serde::{Deserialize, Serialize};

use super::auc::auroc;
use crate::error::{Error, Result};

/// One involvement bucket `(lower, upper]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvolvementBucket {
    pub lower: f64,
    pub upper: f64,
    /// Cancerous cores whose involvement falls in the bucket.
    pub n_cores: usize,
    /// Task-positive cores among them.
    pub n_positive: usize,
    /// Shared benign negatives.
    pub n_negative: usize,
    /// `None` when the bucket has no positives or there are no negatives.
    pub auroc: Option<f64>,
    pub mean_activation: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stratification {
    pub buckets: Vec<InvolvementBucket>,
    pub n_benign: usize,
    pub benign_mean_activation: Option<f64>,
}

/// Bucket bounds from interior edges; leading 0 and trailing 1 are accepted and ignored.
pub fn bucket_bounds(edges: &[f64]) -> Result<Vec<(f64, f64)>> {
    let mut interior: Vec<f64> = edges.to_vec();
    if interior.first() == Some(&0.0) {
        interior.remove(0);
    }
    if interior.last() == Some(&1.0) {
        interior.pop();
    }
    if interior.iter().any(|e| !(*e > 0.0 && *e < 1.0)) {
        return Err(Error::invalid(format!("bucket edges {edges:?} must lie in (0, 1)")));
    }
    if interior.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid(format!("bucket edges {edges:?} must be strictly increasing")));
    }
    let mut bounds = Vec::with_capacity(interior.len() + 1);
    let mut lower = 0.0;
    for &e in interior.iter().chain(std::iter::once(&1.0)) {
        bounds.push((lower, e));
        lower = e;
    }
    Ok(bounds)
}

/// Per-bucket AUROC of `scores` for `positive` cores with involvement in the bucket against all
/// benign (zero-involvement) cores, plus the mean `activations` of every cancerous core in the
/// bucket.
///
/// Cores with involvement > 0 that are not task-positive count toward `n_cores` and the mean
/// activation but are left out of the AUROC.
pub fn stratify_by_involvement(
    involvement: &[f64],
    positive: &[bool],
    scores: &[f64],
    activations: Option<&[f64]>,
    edges: &[f64],
) -> Result<Stratification> {
    let n = involvement.len();
    if positive.len() != n || scores.len() != n || activations.is_some_and(|a| a.len() != n) {
        return Err(Error::invalid("stratification inputs differ in length"));
    }
    if let Some(i) = involvement.iter().find(|i| !(0.0..=1.0).contains(*i)) {
        return Err(Error::invalid(format!("involvement {i} outside [0, 1]")));
    }
    let bounds = bucket_bounds(edges)?;
    let benign: Vec<usize> = (0..n).filter(|&i| involvement[i] == 0.0).collect();
    let mean_of = |idx: &[usize]| -> Option<f64> {
        let a = activations?;
        (!idx.is_empty()).then(|| idx.iter().map(|&i| a[i]).sum::<f64>() / idx.len() as f64)
    };
    let mut buckets = Vec::with_capacity(bounds.len());
    for &(lower, upper) in &bounds {
        let members: Vec<usize> = (0..n)
            .filter(|&i| involvement[i] > lower && involvement[i] <= upper)
            .collect();
        let pos: Vec<usize> = members.iter().copied().filter(|&i| positive[i]).collect();
        let auc = if pos.is_empty() || benign.is_empty() {
            None
        } else {
            let s: Vec<f64> = pos.iter().chain(&benign).map(|&i| scores[i]).collect();
            let l: Vec<bool> = pos.iter().map(|_| true).chain(benign.iter().map(|_| false)).collect();
            Some(auroc(&s, &l)?)
        };
        buckets.push(InvolvementBucket {
            lower,
            upper,
            n_cores: members.len(),
            n_positive: pos.len(),
            n_negative: benign.len(),
            auroc: auc,
            mean_activation: mean_of(&members),
        });
    }
    Ok(Stratification {
        buckets,
        n_benign: benign.len(),
        benign_mean_activation: mean_of(&benign),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bounds_from_edges() {
        let b = bucket_bounds(&[0.2, 0.4, 0.6, 0.8]).unwrap();
        assert_eq!(b.len(), 5);
        assert_eq!(b[0], (0.0, 0.2));
        assert_eq!(b[4], (0.8, 1.0));
        assert_eq!(bucket_bounds(&[0.0, 0.5, 1.0]).unwrap(), vec![(0.0, 0.5), (0.5, 1.0)]);
        assert_eq!(bucket_bounds(&[]).unwrap(), vec![(0.0, 1.0)]);
        assert!(bucket_bounds(&[0.5, 0.3]).is_err());
        assert!(bucket_bounds(&[1.5]).is_err());
    }

    #[test]
    fn single_bucket_equals_unstratified() {
        let inv = [0.0, 0.0, 0.3, 0.9, 0.5, 0.0, 0.1];
        let pos = [false, false, true, true, true, false, true];
        let s = [0.1, 0.5, 0.4, 0.8, 0.3, 0.2, 0.6];
        let st = stratify_by_involvement(&inv, &pos, &s, None, &[]).unwrap();
        assert_eq!(st.buckets[0].auroc.unwrap(), auroc(&s, &pos).unwrap());
        assert_eq!(st.buckets[0].n_cores + st.n_benign, inv.len());
    }

    #[test]
    fn constant_activation_and_undefined_buckets() {
        let inv = [0.0, 0.1, 0.15, 0.9];
        let pos = [false, true, true, false];
        let act = [0.5; 4];
        let st = stratify_by_involvement(&inv, &pos, &act, Some(&act), &[0.2, 0.4, 0.6, 0.8]).unwrap();
        assert_eq!(st.buckets[0].auroc, Some(0.5));
        for b in &st.buckets {
            if b.n_cores > 0 {
                assert_eq!(b.mean_activation, Some(0.5));
            } else {
                assert_eq!(b.mean_activation, None);
            }
        }
        // bucket (0.8, 1] has a core but no positives
        assert_eq!(st.buckets[4].n_cores, 1);
        assert_eq!(st.buckets[4].auroc, None);
        assert_eq!(st.buckets.iter().map(|b| b.n_cores).sum::<usize>() + st.n_benign, 4);
    }
}

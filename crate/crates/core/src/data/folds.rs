use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::types::{Dataset, FoldAssignment};
use crate::error::{Error, Result};

/// Shuffles subjects with a seeded permutation and deals them round-robin into `k` folds.
pub fn make_folds(subject_ids: &[String], k: usize, seed: u64) -> Result<FoldAssignment> {
    if k < 2 {
        return Err(Error::invalid(format!("need at least 2 folds, got {k}")));
    }
    let unique: BTreeSet<&String> = subject_ids.iter().collect();
    if unique.len() != subject_ids.len() {
        return Err(Error::invalid("duplicate subject ids"));
    }
    if k > subject_ids.len() {
        return Err(Error::invalid(format!(
            "{k} folds requested for only {} subjects",
            subject_ids.len()
        )));
    }
    let mut order: Vec<&String> = subject_ids.iter().collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let folds = order
        .into_iter()
        .enumerate()
        .map(|(i, s)| (s.clone(), i % k))
        .collect();
    Ok(FoldAssignment { k, folds })
}

/// Core indices of a train/validation split.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
}

impl FoldAssignment {
    pub fn fold_of(&self, subject_id: &str) -> Option<usize> {
        self.folds.get(subject_id).copied()
    }

    pub fn subjects_in(&self, fold: usize) -> Vec<&str> {
        self.folds
            .iter()
            .filter(|(_, &f)| f == fold)
            .map(|(s, _)| s.as_str())
            .collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in self.folds.values() {
            sizes[f] += 1;
        }
        sizes
    }

    /// Splits the dataset's cores with `fold` as validation.
    ///
    /// Panics if a subject would end up on both sides; callers rely on this as a hard guard
    /// against leakage.
    pub fn split(&self, dataset: &Dataset, fold: usize) -> Result<Split> {
        if fold >= self.k {
            return Err(Error::invalid(format!("fold {fold} out of range for k={}", self.k)));
        }
        let mut train = Vec::new();
        let mut validation = Vec::new();
        for (i, core) in dataset.cores.iter().enumerate() {
            match self.fold_of(&core.subject_id) {
                Some(f) if f == fold => validation.push(i),
                Some(_) => train.push(i),
                None => {
                    return Err(Error::invalid(format!(
                        "subject `{}` has no fold assignment",
                        core.subject_id
                    )))
                }
            }
        }
        let train_subjects: BTreeSet<&str> =
            train.iter().map(|&i| dataset.cores[i].subject_id.as_str()).collect();
        let leaked: Vec<&str> = validation
            .iter()
            .map(|&i| dataset.cores[i].subject_id.as_str())
            .filter(|s| train_subjects.contains(s))
            .collect();
        assert!(leaked.is_empty(), "subject leakage between train and validation: {leaked:?}");
        Ok(Split { train, validation })
    }
}

/// Groups core indices by subject, preserving dataset order.
pub fn cores_by_subject(dataset: &Dataset) -> BTreeMap<&str, Vec<usize>> {
    let mut map: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, c) in dataset.cores.iter().enumerate() {
        map.entry(c.subject_id.as_str()).or_default().push(i);
    }
    map
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("s{i:03}")).collect()
    }

    #[test]
    fn ten_subjects_five_folds() {
        let f = make_folds(&ids(10), 5, 1).unwrap();
        assert_eq!(f.fold_sizes(), vec![2; 5]);
        assert_eq!(f.folds.len(), 10);
    }

    #[test]
    fn deterministic_under_seed() {
        assert_eq!(make_folds(&ids(23), 5, 9).unwrap(), make_folds(&ids(23), 5, 9).unwrap());
        assert_ne!(make_folds(&ids(23), 5, 9).unwrap(), make_folds(&ids(23), 5, 10).unwrap());
    }

    #[test]
    fn seven_subjects_five_folds_sizes() {
        let mut sizes = make_folds(&ids(7), 5, 3).unwrap().fold_sizes();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![1, 1, 1, 2, 2]);
        // Exhaustive counting: every way of splitting 7 into 5 parts with skew ≤ 1.
        let mut balanced = Vec::new();
        for a in 0..=7usize {
            for b in 0..=7 - a {
                for c in 0..=7 - a - b {
                    for d in 0..=7 - a - b - c {
                        let e = 7 - a - b - c - d;
                        let v = [a, b, c, d, e];
                        if v.iter().max().unwrap() - v.iter().min().unwrap() <= 1 {
                            let mut s = v.to_vec();
                            s.sort_unstable();
                            balanced.push(s);
                        }
                    }
                }
            }
        }
        balanced.dedup();
        assert!(balanced.iter().all(|s| s == &vec![1, 1, 1, 2, 2]));
    }

    #[test]
    fn invalid_requests() {
        assert!(make_folds(&ids(3), 5, 0).is_err());
        assert!(make_folds(&ids(3), 1, 0).is_err());
        let mut dup = ids(4);
        dup[1] = dup[0].clone();
        assert!(make_folds(&dup, 2, 0).is_err());
    }
}

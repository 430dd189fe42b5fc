use super::types::{Category, CoreLabels, MarkerStats};
use crate::error::{Error, Result};

/// Maps a Gleason grade group to its binary task labels and category.
///
/// GG1 is filed under `IsPca` while `is_pca` (the GG2+ task) stays false, so GG1 cores are
/// neither benign nor positive for the PCa task.
pub fn grade_to_labels(gg: u8) -> Result<CoreLabels> {
    let category = match gg {
        0 => Category::Benign,
        1 | 2 => Category::IsPca,
        3..=5 => Category::CsPca,
        _ => return Err(Error::invalid(format!("grade group {gg} outside 0..5"))),
    };
    Ok(CoreLabels {
        is_cspca: gg >= 3,
        is_pca: gg >= 2,
        category,
    })
}

/// Subject-level diagnosis: the most clinically significant core.
pub fn subject_diagnosis(cores: &[CoreLabels]) -> Result<Category> {
    cores
        .iter()
        .map(|c| c.category)
        .max()
        .ok_or_else(|| Error::invalid("subject diagnosis needs at least one core"))
}

/// `(value - mean) / std` using the fitted statistics for `marker_name`.
pub fn normalize_marker(value: Option<f64>, stats: &MarkerStats, marker_name: &str) -> Result<f64> {
    let m = stats
        .entries
        .get(marker_name)
        .ok_or_else(|| Error::config(format!("no normalization statistics for marker `{marker_name}`")))?;
    let v = value.ok_or_else(|| Error::MissingMarker(marker_name.to_string()))?;
    if !v.is_finite() {
        return Err(Error::MissingMarker(marker_name.to_string()));
    }
    Ok((v - m.mean) / m.std)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stats(mean: f64, std: f64) -> MarkerStats {
        let mut s = MarkerStats::default();
        s.insert("psa", mean, std).unwrap();
        s
    }

    #[test]
    fn grade_examples() {
        let l3 = grade_to_labels(3).unwrap();
        assert!(l3.is_cspca && l3.is_pca);
        assert_eq!(l3.category, Category::CsPca);
        let l2 = grade_to_labels(2).unwrap();
        assert!(!l2.is_cspca && l2.is_pca);
        assert_eq!(l2.category, Category::IsPca);
        let l0 = grade_to_labels(0).unwrap();
        assert!(!l0.is_cspca && !l0.is_pca);
        assert_eq!(l0.category, Category::Benign);
        let l1 = grade_to_labels(1).unwrap();
        assert!(!l1.is_pca);
        assert_eq!(l1.category, Category::IsPca);
        assert!(grade_to_labels(6).is_err());
    }

    #[test]
    fn grade_labels_are_monotone() {
        for a in 0..=5u8 {
            for b in a..=5u8 {
                let (la, lb) = (grade_to_labels(a).unwrap(), grade_to_labels(b).unwrap());
                assert!(!la.is_cspca || lb.is_cspca);
                assert!(!la.is_pca || lb.is_pca);
                assert!(la.category <= lb.category);
                assert!(!la.is_cspca || la.is_pca);
                assert_eq!(la.category == Category::CsPca, la.is_cspca);
            }
        }
    }

    #[test]
    fn diagnosis_examples() {
        let l = |gg| grade_to_labels(gg).unwrap();
        assert_eq!(subject_diagnosis(&[l(0), l(1), l(4)]).unwrap(), Category::CsPca);
        assert_eq!(subject_diagnosis(&[l(0), l(0)]).unwrap(), Category::Benign);
        assert_eq!(subject_diagnosis(&[l(2), l(0)]).unwrap(), Category::IsPca);
        assert!(subject_diagnosis(&[]).is_err());
    }

    #[test]
    fn diagnosis_matches_brute_force_over_small_multisets() {
        let labels: Vec<CoreLabels> = [0u8, 1, 3].iter().map(|&g| grade_to_labels(g).unwrap()).collect();
        let rank = |c: Category| match c {
            Category::Benign => 0,
            Category::IsPca => 1,
            Category::CsPca => 2,
        };
        for len in 1..=4usize {
            for code in 0..3usize.pow(len as u32) {
                let mut cores = Vec::new();
                let mut c = code;
                for _ in 0..len {
                    cores.push(labels[c % 3]);
                    c /= 3;
                }
                let mut best = 0;
                for core in &cores {
                    best = best.max(rank(core.category));
                }
                assert_eq!(rank(subject_diagnosis(&cores).unwrap()), best);
            }
        }
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_marker(Some(6.0), &stats(6.0, 2.0), "psa").unwrap(), 0.0);
        assert_eq!(normalize_marker(Some(8.0), &stats(6.0, 2.0), "psa").unwrap(), 1.0);
        let v = normalize_marker(Some(3.1), &stats(5.5, 1.6), "psa").unwrap();
        assert!((v + 1.5).abs() < 1e-12);
        assert!(matches!(normalize_marker(Some(1.0), &stats(5.5, 1.6), "age"), Err(Error::Config(_))));
        assert!(matches!(normalize_marker(None, &stats(5.5, 1.6), "psa"), Err(Error::MissingMarker(_))));
    }
}

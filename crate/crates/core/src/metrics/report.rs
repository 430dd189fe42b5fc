use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::auc::{auroc, rates_at_threshold, sensitivity_at_specificity, OperatingPoint};
use super::stratify::{stratify_by_involvement, Stratification};
use super::CorePrediction;
use crate::data::{subject_diagnosis, BiopsyCore, Category};
use crate::error::{Error, Result};
use crate::riskscore::{discretize, patient_max_score, RiskBins};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    /// GG ≥ 3 against everything else.
    CspcaVsRest,
    /// GG ≥ 2 against everything else.
    PcaVsRest,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreSource {
    HeatmapMean,
    RiskProbability,
    RiskScore,
    PatientMaxScore,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitivityPoint {
    pub specificity: f64,
    pub sensitivity: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskReport {
    pub task: Task,
    pub score_source: ScoreSource,
    /// Set when the head that normally scores this task is absent.
    pub fallback: bool,
    pub n: usize,
    pub n_positive: usize,
    pub n_negative: usize,
    pub auroc: Option<f64>,
    pub sensitivity: Vec<SensitivityPoint>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoreRow {
    pub core_id: String,
    pub subject_id: String,
    pub grade_group: u8,
    pub category: Category,
    pub involvement: f64,
    pub pca_score: Option<f64>,
    pub risk: Option<f64>,
    pub model_score: Option<u8>,
    pub reference_score: Option<u8>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatientRow {
    pub subject_id: String,
    /// Core ids in evaluation order.
    pub cores: Vec<String>,
    pub model_score: Option<u8>,
    pub diagnosis: Category,
    pub reference_score: Option<u8>,
}

/// Evaluation of one set of predictions.
///
/// Absent metrics are `null` in JSON and listed by name in `undefined`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_cores: usize,
    pub n_subjects: usize,
    pub tasks: Vec<TaskReport>,
    pub stratification_source: ScoreSource,
    pub stratification: Stratification,
    pub patient_task: Option<TaskReport>,
    /// Among subjects whose patient score is 5, the fraction with a benign diagnosis.
    pub top_score_benign_fraction: Option<f64>,
    /// Rates at the calibration operating threshold, scored on risk probabilities.
    pub operating_point: Option<OperatingPoint>,
    pub cores: Vec<CoreRow>,
    pub patients: Vec<PatientRow>,
    pub undefined: Vec<String>,
}

impl EvalReport {
    pub fn task(&self, task: Task) -> Option<&TaskReport> {
        self.tasks.iter().find(|t| t.task == task)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub specificities: Vec<f64>,
    pub bucket_edges: Vec<f64>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            specificities: vec![0.2, 0.4, 0.6],
            bucket_edges: vec![0.2, 0.4, 0.6, 0.8],
        }
    }
}

fn task_report(
    task: Task,
    score_source: ScoreSource,
    fallback: bool,
    scores: &[f64],
    labels: &[bool],
    specificities: &[f64],
    undefined: &mut Vec<String>,
    name: &str,
) -> Result<TaskReport> {
    let n_positive = labels.iter().filter(|&&l| l).count();
    let defined = n_positive > 0 && n_positive < labels.len();
    let mut sensitivity = Vec::with_capacity(specificities.len());
    for &spec in specificities {
        let value = if defined {
            Some(sensitivity_at_specificity(scores, labels, spec)?)
        } else {
            undefined.push(format!("{name}.sensitivity@{spec}"));
            None
        };
        sensitivity.push(SensitivityPoint {
            specificity: spec,
            sensitivity: value,
        });
    }
    let auc = if defined {
        Some(auroc(scores, labels)?)
    } else {
        undefined.push(format!("{name}.auroc"));
        None
    };
    Ok(TaskReport {
        task,
        score_source,
        fallback,
        n: labels.len(),
        n_positive,
        n_negative: labels.len() - n_positive,
        auroc: auc,
        sensitivity,
    })
}

/// Scores a run: PCa (GG2+) by needle-mean heatmap activation, csPCa (GG3+) by the
/// discretized model risk score, involvement strata, and patient-level maxima.
///
/// Single-head predictions fall back to the other head's output and flag it. Risk predictions
/// require `bins`; heatmap-only predictions use them, when given, to assign patient scores.
pub fn evaluate_run(
    predictions: &[CorePrediction],
    cores: &[BiopsyCore],
    bins: Option<&RiskBins>,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    if predictions.is_empty() {
        return Err(Error::invalid("no predictions to evaluate"));
    }
    let by_id: BTreeMap<&str, &BiopsyCore> = cores.iter().map(|c| (c.core_id.as_str(), c)).collect();
    let matched: Vec<&BiopsyCore> = predictions
        .iter()
        .map(|p| {
            by_id
                .get(p.core_id.as_str())
                .copied()
                .ok_or_else(|| Error::invalid(format!("prediction for unknown core {}", p.core_id)))
        })
        .collect::<Result<_>>()?;
    let has_heatmap = predictions.iter().all(|p| p.pca_score.is_some());
    let has_risk = predictions.iter().all(|p| p.risk.is_some());
    if !has_heatmap && !has_risk {
        return Err(Error::config(
            "predictions must carry a heatmap score or a risk probability for every core",
        ));
    }
    if has_risk && bins.is_none() {
        return Err(Error::config("risk bins are required to score the csPCa task (--bins)"));
    }
    let labels: Vec<_> = matched.iter().map(|c| c.labels()).collect();
    let pca_labels: Vec<bool> = labels.iter().map(|l| l.is_pca).collect();
    let cspca_labels: Vec<bool> = labels.iter().map(|l| l.is_cspca).collect();
    let heat: Option<Vec<f64>> = has_heatmap.then(|| predictions.iter().map(|p| p.pca_score.unwrap()).collect());
    let risk: Option<Vec<f64>> = has_risk.then(|| predictions.iter().map(|p| p.risk.unwrap()).collect());

    let model_scores: Option<Vec<u8>> = match (bins, risk.as_ref().or(heat.as_ref())) {
        (Some(b), Some(s)) => Some(s.iter().map(|&v| discretize(v, b)).collect::<Result<_>>()?),
        _ => None,
    };

    let mut undefined = Vec::new();
    let specs = &opts.specificities;
    let pca = match (&heat, &risk) {
        (Some(h), _) => task_report(Task::PcaVsRest, ScoreSource::HeatmapMean, false, h, &pca_labels, specs, &mut undefined, "pca_vs_rest")?,
        (None, Some(r)) => task_report(Task::PcaVsRest, ScoreSource::RiskProbability, true, r, &pca_labels, specs, &mut undefined, "pca_vs_rest")?,
        (None, None) => unreachable!(),
    };
    let cspca = if has_risk {
        let s: Vec<f64> = model_scores.as_ref().unwrap().iter().map(|&g| f64::from(g)).collect();
        task_report(Task::CspcaVsRest, ScoreSource::RiskScore, false, &s, &cspca_labels, specs, &mut undefined, "cspca_vs_rest")?
    } else {
        let h = heat.as_ref().unwrap();
        task_report(Task::CspcaVsRest, ScoreSource::HeatmapMean, true, h, &cspca_labels, specs, &mut undefined, "cspca_vs_rest")?
    };

    let (strat_source, strat_scores) = match (&risk, &heat) {
        (Some(r), _) => (ScoreSource::RiskProbability, r),
        (None, Some(h)) => (ScoreSource::HeatmapMean, h),
        (None, None) => unreachable!(),
    };
    let involvement: Vec<f64> = matched.iter().map(|c| c.involvement).collect();
    let stratification = stratify_by_involvement(
        &involvement,
        &cspca_labels,
        strat_scores,
        heat.as_deref(),
        &opts.bucket_edges,
    )?;
    for b in &stratification.buckets {
        if b.auroc.is_none() {
            undefined.push(format!("bucket({},{}].auroc", b.lower, b.upper));
        }
    }

    let core_rows: Vec<CoreRow> = predictions
        .iter()
        .zip(&matched)
        .enumerate()
        .map(|(i, (p, c))| CoreRow {
            core_id: p.core_id.clone(),
            subject_id: c.subject_id.clone(),
            grade_group: c.grade_group,
            category: labels[i].category,
            involvement: c.involvement,
            pca_score: p.pca_score,
            risk: p.risk,
            model_score: model_scores.as_ref().map(|m| m[i]),
            reference_score: c.risk_score_reference,
        })
        .collect();

    let mut subject_order: Vec<&str> = Vec::new();
    let mut members: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, c) in matched.iter().enumerate() {
        let entry = members.entry(c.subject_id.as_str()).or_default();
        if entry.is_empty() {
            subject_order.push(c.subject_id.as_str());
        }
        entry.push(i);
    }
    let mut patients = Vec::with_capacity(subject_order.len());
    for sid in &subject_order {
        let idx = &members[sid];
        let model_score = match &model_scores {
            Some(m) => Some(patient_max_score(&idx.iter().map(|&i| m[i]).collect::<Vec<_>>())?),
            None => None,
        };
        let diag_labels: Vec<_> = idx.iter().map(|&i| labels[i]).collect();
        patients.push(PatientRow {
            subject_id: sid.to_string(),
            cores: idx.iter().map(|&i| predictions[i].core_id.clone()).collect(),
            model_score,
            diagnosis: subject_diagnosis(&diag_labels)?,
            reference_score: idx.iter().filter_map(|&i| matched[i].risk_score_reference).max(),
        });
    }

    let patient_task = if model_scores.is_some() {
        let s: Vec<f64> = patients.iter().map(|p| f64::from(p.model_score.unwrap())).collect();
        let l: Vec<bool> = patients.iter().map(|p| p.diagnosis == Category::CsPca).collect();
        Some(task_report(
            Task::CspcaVsRest,
            ScoreSource::PatientMaxScore,
            !has_risk,
            &s,
            &l,
            specs,
            &mut undefined,
            "patient_cspca",
        )?)
    } else {
        None
    };
    let top: Vec<&PatientRow> = patients.iter().filter(|p| p.model_score == Some(5)).collect();
    let top_score_benign_fraction = if top.is_empty() {
        if model_scores.is_some() {
            undefined.push("top_score_benign_fraction".into());
        }
        None
    } else {
        Some(top.iter().filter(|p| p.diagnosis == Category::Benign).count() as f64 / top.len() as f64)
    };

    let operating_point = match (bins.and_then(|b| b.provenance.operating_threshold), &risk) {
        (Some(t), Some(r)) if cspca_labels.iter().any(|&l| l) && cspca_labels.iter().any(|&l| !l) => {
            Some(rates_at_threshold(r, &cspca_labels, Some(t))?)
        }
        _ => None,
    };

    Ok(EvalReport {
        n_cores: predictions.len(),
        n_subjects: patients.len(),
        tasks: vec![cspca, pca],
        stratification_source: strat_source,
        stratification,
        patient_task,
        top_score_benign_fraction,
        operating_point,
        cores: core_rows,
        patients,
        undefined,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::IMAGE_SIZE;
    use ndarray::Array2;

    fn core(id: &str, subject: &str, gg: u8, inv: f64) -> BiopsyCore {
        let mut mask = Array2::from_elem((IMAGE_SIZE, IMAGE_SIZE), false);
        mask[[10, 10]] = true;
        BiopsyCore {
            core_id: id.into(),
            subject_id: subject.into(),
            image: Array2::zeros((IMAGE_SIZE, IMAGE_SIZE)),
            needle_mask: mask,
            grade_group: gg,
            involvement: inv,
            risk_score_reference: None,
        }
    }

    fn pred(c: &BiopsyCore, heat: Option<f64>, risk: Option<f64>) -> CorePrediction {
        CorePrediction {
            core_id: c.core_id.clone(),
            subject_id: c.subject_id.clone(),
            pca_score: heat,
            risk,
        }
    }

    #[test]
    fn oracle_predictions_are_perfect() {
        let cores = vec![
            core("a", "s1", 0, 0.0),
            core("b", "s1", 3, 0.5),
            core("c", "s2", 2, 0.3),
            core("d", "s2", 0, 0.0),
            core("e", "s3", 4, 0.9),
        ];
        let preds: Vec<_> = cores
            .iter()
            .map(|c| {
                let l = c.labels();
                pred(c, Some(f64::from(u8::from(l.is_pca))), Some(f64::from(u8::from(l.is_cspca))))
            })
            .collect();
        let bins = RiskBins::new([0.5, 0.5, 0.5, 0.5]).unwrap();
        let r = evaluate_run(&preds, &cores, Some(&bins), &EvalOptions::default()).unwrap();
        for t in &r.tasks {
            assert_eq!(t.auroc, Some(1.0));
            assert!(t.sensitivity.iter().all(|s| s.sensitivity == Some(1.0)));
        }
    }

    #[test]
    fn constant_predictions_flag_undefined() {
        let cores = vec![core("a", "s1", 0, 0.0), core("b", "s1", 0, 0.0), core("c", "s2", 2, 0.3)];
        let preds: Vec<_> = cores.iter().map(|c| pred(c, Some(0.5), Some(0.5))).collect();
        let bins = RiskBins::new([0.2, 0.4, 0.6, 0.8]).unwrap();
        let r = evaluate_run(&preds, &cores, Some(&bins), &EvalOptions::default()).unwrap();
        assert_eq!(r.task(Task::PcaVsRest).unwrap().auroc, Some(0.5));
        assert_eq!(r.task(Task::CspcaVsRest).unwrap().auroc, None);
        assert!(r.undefined.contains(&"cspca_vs_rest.auroc".to_string()));
        assert_eq!(
            r.stratification.buckets.iter().map(|b| b.n_cores).sum::<usize>() + r.stratification.n_benign,
            r.n_cores
        );
    }

    #[test]
    fn missing_bins_or_outputs_are_config_errors() {
        let cores = vec![core("a", "s1", 0, 0.0), core("b", "s1", 3, 0.4)];
        let preds: Vec<_> = cores.iter().map(|c| pred(c, Some(0.5), Some(0.5))).collect();
        assert!(matches!(
            evaluate_run(&preds, &cores, None, &EvalOptions::default()),
            Err(Error::Config(_))
        ));
        let none: Vec<_> = cores.iter().map(|c| pred(c, None, None)).collect();
        assert!(matches!(
            evaluate_run(&none, &cores, None, &EvalOptions::default()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn mask_only_falls_back_to_heatmap() {
        let cores = vec![core("a", "s1", 0, 0.0), core("b", "s1", 3, 0.4)];
        let preds = vec![pred(&cores[0], Some(0.2), None), pred(&cores[1], Some(0.7), None)];
        let r = evaluate_run(&preds, &cores, None, &EvalOptions::default()).unwrap();
        let cs = r.task(Task::CspcaVsRest).unwrap();
        assert!(cs.fallback);
        assert_eq!(cs.score_source, ScoreSource::HeatmapMean);
        assert_eq!(cs.auroc, Some(1.0));
        assert!(r.patients.iter().all(|p| p.model_score.is_none()));
        let class_only = vec![pred(&cores[0], None, Some(0.2)), pred(&cores[1], None, Some(0.7))];
        let bins = RiskBins::new([0.2, 0.4, 0.6, 0.8]).unwrap();
        let r = evaluate_run(&class_only, &cores, Some(&bins), &EvalOptions::default()).unwrap();
        let p = r.task(Task::PcaVsRest).unwrap();
        assert!(p.fallback);
        assert_eq!(p.score_source, ScoreSource::RiskProbability);
    }
}

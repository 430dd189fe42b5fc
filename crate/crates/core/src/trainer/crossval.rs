use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{train_fold, FoldRun, RunRecord, TrainConfig};
use crate::data::{make_folds, Dataset, FoldAssignment, Marker};
use crate::error::{Error, Result};
use crate::metrics::{auroc, mean_std, sensitivity_at_specificity, CorePrediction};
use crate::model::HeadMode;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvOptions {
    /// Folds trained concurrently; 0 uses the ambient thread pool.
    pub workers: usize,
    pub run_dir: Option<PathBuf>,
    /// Seed of the subject-to-fold assignment; defaults to the training seed.
    pub fold_seed: Option<u64>,
}

impl Default for CvOptions {
    fn default() -> Self {
        CvOptions {
            workers: 0,
            run_dir: None,
            fold_seed: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation over folds.
    pub std: f64,
    /// Folds on which the metric was defined.
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub fold: usize,
    pub record: RunRecord,
    pub metrics: BTreeMap<String, Option<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub k: usize,
    pub assignment: FoldAssignment,
    pub folds: Vec<FoldSummary>,
    pub aggregate: BTreeMap<String, MeanStd>,
    /// Set when csPCa metrics come from the heatmap because the risk head is absent.
    pub cspca_fallback: bool,
    /// Set when PCa metrics come from the risk head because the heatmap head is absent.
    pub pca_fallback: bool,
    /// Out-of-fold predictions in dataset order.
    pub predictions: Vec<CorePrediction>,
}

/// Validation metrics from raw head outputs: PCa AUROC on the needle-mean heatmap score,
/// csPCa AUROC and sensitivities on the risk probability, each falling back to the other
/// head when its own is absent. Undefined metrics are `None`.
pub fn fold_metrics(predictions: &[CorePrediction], dataset: &Dataset) -> BTreeMap<String, Option<f64>> {
    let by_id: BTreeMap<&str, u8> = dataset
        .cores
        .iter()
        .map(|c| (c.core_id.as_str(), c.grade_group))
        .collect();
    let gg: Vec<u8> = predictions.iter().map(|p| by_id[p.core_id.as_str()]).collect();
    let pca: Vec<bool> = gg.iter().map(|&g| g >= 2).collect();
    let cspca: Vec<bool> = gg.iter().map(|&g| g >= 3).collect();
    let heat: Option<Vec<f64>> = predictions.iter().map(|p| p.pca_score).collect();
    let risk: Option<Vec<f64>> = predictions.iter().map(|p| p.risk).collect();
    let pca_scores = heat.as_ref().or(risk.as_ref());
    let cspca_scores = risk.as_ref().or(heat.as_ref());
    let mut m = BTreeMap::new();
    m.insert("pca_auroc".to_string(), pca_scores.and_then(|s| auroc(s, &pca).ok()));
    m.insert("cspca_auroc".to_string(), cspca_scores.and_then(|s| auroc(s, &cspca).ok()));
    for spec in [0.2, 0.4, 0.6] {
        m.insert(
            format!("cspca_sens@{spec}"),
            cspca_scores.and_then(|s| sensitivity_at_specificity(s, &cspca, spec).ok()),
        );
    }
    m
}

fn aggregate(folds: &[FoldSummary]) -> BTreeMap<String, MeanStd> {
    let mut out = BTreeMap::new();
    if let Some(first) = folds.first() {
        for key in first.metrics.keys() {
            let vals: Vec<f64> = folds.iter().filter_map(|f| f.metrics.get(key).copied().flatten()).collect();
            if !vals.is_empty() {
                let (mean, std) = mean_std(&vals);
                out.insert(key.clone(), MeanStd { mean, std, n: vals.len() });
            }
        }
    }
    out
}

fn in_pool<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if workers == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::config(format!("cannot start {workers} workers: {e}")))?;
    Ok(pool.install(f))
}

/// k-fold cross-validation by subject. Folds are independent and may run concurrently;
/// results are identical for any worker count.
pub fn cross_validate(dataset: &Dataset, k: usize, cfg: &TrainConfig, opts: &CvOptions) -> Result<CvResult> {
    cfg.validate()?;
    let assignment = make_folds(&dataset.subject_ids(), k, opts.fold_seed.unwrap_or(cfg.seed))?;
    let run_dir = opts.run_dir.as_deref();
    let runs: Vec<FoldRun> = in_pool(opts.workers, || {
        (0..k)
            .into_par_iter()
            .map(|fold| train_fold(dataset, &assignment, fold, cfg, run_dir))
            .collect::<Result<Vec<_>>>()
    })??;
    let folds: Vec<FoldSummary> = runs
        .iter()
        .enumerate()
        .map(|(fold, r)| FoldSummary {
            fold,
            record: r.record.clone(),
            metrics: fold_metrics(&r.predictions, dataset),
        })
        .collect();
    let mut by_id: BTreeMap<&str, &CorePrediction> = BTreeMap::new();
    for r in &runs {
        for p in &r.predictions {
            by_id.insert(p.core_id.as_str(), p);
        }
    }
    let predictions: Vec<CorePrediction> = dataset
        .cores
        .iter()
        .map(|c| by_id[c.core_id.as_str()].clone())
        .collect();
    let result = CvResult {
        k,
        assignment,
        aggregate: aggregate(&folds),
        folds,
        cspca_fallback: !cfg.model.head_mode.has_risk(),
        pca_fallback: !cfg.model.head_mode.has_heatmap(),
        predictions,
    };
    if let Some(dir) = run_dir {
        write_cv_outputs(&result, dir)?;
    }
    Ok(result)
}

pub const CV_SUMMARY_FILE: &str = "cv_summary.json";
pub const OOF_PREDICTIONS_FILE: &str = "oof_predictions.csv";

fn write_cv_outputs(result: &CvResult, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let summary = serde_json::json!({
        "k": result.k,
        "aggregate": result.aggregate,
        "folds": result.folds.iter().map(|f| serde_json::json!({
            "fold": f.fold,
            "metrics": f.metrics,
            "final_loss": f.record.epochs.last().map(|e| e.total),
            "validation_subjects": f.record.validation_subjects,
        })).collect::<Vec<_>>(),
        "cspca_fallback": result.cspca_fallback,
        "pca_fallback": result.pca_fallback,
    });
    let path = dir.join(CV_SUMMARY_FILE);
    std::fs::write(&path, serde_json::to_string_pretty(&summary)?).map_err(|e| Error::io(&path, e))?;
    crate::metrics::write_predictions(dir.join(OOF_PREDICTIONS_FILE), &result.predictions)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub markers: String,
    pub head_mode: HeadMode,
    pub aggregate: BTreeMap<String, MeanStd>,
    pub cspca_fallback: bool,
    pub pca_fallback: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub k: usize,
    pub rows: Vec<AblationRow>,
}

const TABLE_METRICS: [&str; 5] = ["pca_auroc", "cspca_auroc", "cspca_sens@0.2", "cspca_sens@0.4", "cspca_sens@0.6"];

impl AblationTable {
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["markers".to_string(), "head_mode".into(), "cspca_fallback".into(), "pca_fallback".into()];
        for m in TABLE_METRICS {
            header.push(format!("{m}_mean"));
            header.push(format!("{m}_std"));
        }
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![
                r.markers.clone(),
                r.head_mode.name().to_string(),
                r.cspca_fallback.to_string(),
                r.pca_fallback.to_string(),
            ];
            for m in TABLE_METRICS {
                match r.aggregate.get(m) {
                    Some(v) => rec.extend([v.mean.to_string(), v.std.to_string()]),
                    None => rec.extend([String::new(), String::new()]),
                }
            }
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }
}

/// Every combination of marker set and head mode applied to `base`.
pub fn ablation_grid(base: &TrainConfig, marker_sets: &[Vec<Marker>], head_modes: &[HeadMode]) -> Vec<TrainConfig> {
    let mut grid = Vec::new();
    for &mode in head_modes {
        for markers in marker_sets {
            let mut cfg = base.clone();
            cfg.model.prompt_markers = markers.clone();
            cfg.model.head_mode = mode;
            grid.push(cfg);
        }
    }
    grid
}

/// Cross-validates every configuration of `grid` on the same folds. Configurations may differ
/// only in prompt markers and head mode. Cell outputs go to `<run_dir>/<head_mode>_<markers>/`.
pub fn run_ablation(dataset: &Dataset, k: usize, grid: &[TrainConfig], opts: &CvOptions) -> Result<AblationTable> {
    let first = grid.first().ok_or_else(|| Error::invalid("ablation grid is empty"))?;
    let normalize = |c: &TrainConfig| {
        let mut c = c.clone();
        c.model.prompt_markers.clear();
        c.model.head_mode = HeadMode::Both;
        c
    };
    let reference = normalize(first);
    for (i, c) in grid.iter().enumerate() {
        if normalize(c) != reference {
            return Err(Error::invalid(format!(
                "ablation cell {i} differs from cell 0 in more than prompt markers and head mode"
            )));
        }
    }
    let fold_seed = Some(opts.fold_seed.unwrap_or(first.seed));
    let mut rows = Vec::with_capacity(grid.len());
    for cfg in grid {
        let markers = Marker::list_name(&cfg.model.prompt_markers);
        let cell_opts = CvOptions {
            workers: opts.workers,
            run_dir: opts
                .run_dir
                .as_ref()
                .map(|d| d.join(format!("{}_{}", cfg.model.head_mode.name(), markers))),
            fold_seed,
        };
        let cv = cross_validate(dataset, k, cfg, &cell_opts)?;
        rows.push(AblationRow {
            markers,
            head_mode: cfg.model.head_mode,
            aggregate: cv.aggregate,
            cspca_fallback: cv.cspca_fallback,
            pca_fallback: cv.pca_fallback,
        });
    }
    let table = AblationTable { k, rows };
    if let Some(dir) = &opts.run_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        table.write_csv(dir.join("ablation.csv"))?;
        table.write_json(dir.join("ablation.json"))?;
    }
    Ok(table)
}

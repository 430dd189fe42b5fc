//! Evaluation: ROC statistics, involvement-stratified analysis, run reports and figures.

mod auc;
mod figures;
mod report;
mod stratify;

use std::path::Path;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use auc::{auroc, rates_at_threshold, sensitivity_at_specificity, threshold_at_specificity, OperatingPoint};
pub use figures::{emit_figures, overlay_image, FigureFiles, LEGEND_HEIGHT};
pub use report::{
    evaluate_run, CoreRow, EvalOptions, EvalReport, PatientRow, ScoreSource, SensitivityPoint, Task, TaskReport,
};
pub use stratify::{bucket_bounds, stratify_by_involvement, InvolvementBucket, Stratification};

/// Model outputs reduced to what evaluation needs, keyed by core.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorePrediction {
    pub core_id: String,
    pub subject_id: String,
    /// Mean heatmap activation over the needle trace.
    pub pca_score: Option<f64>,
    /// Risk head probability.
    pub risk: Option<f64>,
}

/// Core-level PCa score: the mean heatmap activation inside the needle trace.
pub fn core_pca_score(heatmap: ArrayView2<f64>, needle_mask: ArrayView2<bool>) -> Result<f64> {
    crate::objective::predicted_involvement(heatmap, needle_mask)
}

/// Writes predictions as CSV with columns `core_id,subject_id,pca_score,risk` (empty when absent).
pub fn write_predictions(path: impl AsRef<Path>, predictions: &[CorePrediction]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    for p in predictions {
        w.serialize(p)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_predictions(path: impl AsRef<Path>) -> Result<Vec<CorePrediction>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(|e| match e.kind() {
        csv::ErrorKind::Io(_) => Error::io(path, std::io::Error::other(e.to_string())),
        _ => Error::from(e),
    })?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Sample mean and standard deviation (`n - 1` denominator; 0 for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

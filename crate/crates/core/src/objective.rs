//! Two-term training objective: csPCa cross-entropy on the risk head plus involvement
//! cross-entropy on the heatmap's mean activation inside the needle trace.

use std::sync::Arc;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::data::{CoreLabels, Mask};
use crate::error::{Error, Result};
use crate::model::{GraphOutput, ModelOutput};
use crate::nn::{bce_value, Graph, Var};

/// Predictions are clamped to `[EPS, 1 - EPS]` before taking logarithms.
pub const EPS: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Multiplier on the csPCa term for positive cores; `None` weighs all cores equally.
    pub positive_weight: Option<f64>,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { positive_weight: None }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_cspca: f64,
    pub l_hmap: f64,
    pub total: f64,
}

/// `-p ln q - (1-p) ln(1-q)`, natural log, `q` clamped to `[EPS, 1-EPS]`.
pub fn binary_cross_entropy(target: f64, prediction: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&target) {
        return Err(Error::invalid(format!("cross-entropy target {target} outside [0, 1]")));
    }
    if !prediction.is_finite() {
        return Err(Error::invalid("cross-entropy prediction is not finite"));
    }
    Ok(bce_value(target, prediction, EPS))
}

/// Mean heatmap activation over the needle pixels.
pub fn predicted_involvement(heatmap: ArrayView2<f64>, needle_mask: ArrayView2<bool>) -> Result<f64> {
    if heatmap.dim() != needle_mask.dim() {
        return Err(Error::invalid(format!(
            "heatmap {:?} and needle mask {:?} differ in shape",
            heatmap.dim(),
            needle_mask.dim()
        )));
    }
    let (sum, n) = heatmap
        .iter()
        .zip(needle_mask.iter())
        .filter(|(_, &m)| m)
        .fold((0.0, 0usize), |(s, n), (&v, _)| (s + v, n + 1));
    if n == 0 {
        return Err(Error::invalid("needle mask is empty"));
    }
    Ok(sum / n as f64)
}

/// `H(I, Î)` where `Î` is the predicted involvement.
pub fn heatmap_loss(heatmap: ArrayView2<f64>, needle_mask: ArrayView2<bool>, involvement: f64) -> Result<f64> {
    binary_cross_entropy(involvement, predicted_involvement(heatmap, needle_mask)?)
}

pub fn risk_loss(is_cspca: bool, risk: f64) -> Result<f64> {
    binary_cross_entropy(if is_cspca { 1.0 } else { 0.0 }, risk)
}

/// One core's contribution to the batch objective.
#[derive(Clone, Copy, Debug)]
pub struct LossSample<'a> {
    pub output: &'a ModelOutput,
    pub labels: CoreLabels,
    pub needle_mask: &'a Mask,
    pub involvement: f64,
}

/// Per-term batch means, summed. Heads absent from the outputs contribute zero.
pub fn total_loss(batch: &[LossSample], cfg: &LossConfig) -> Result<LossBreakdown> {
    if batch.is_empty() {
        return Err(Error::invalid("loss over an empty batch"));
    }
    let n = batch.len() as f64;
    let (mut lc, mut lh) = (0.0, 0.0);
    for s in batch {
        if let Some(r) = s.output.risk {
            lc += class_weight(cfg, s.labels.is_cspca) * risk_loss(s.labels.is_cspca, r)?;
        }
        if let Some(h) = &s.output.heatmap {
            lh += heatmap_loss(h.view(), s.needle_mask.view(), s.involvement)?;
        }
    }
    Ok(breakdown(lc / n, lh / n))
}

fn class_weight(cfg: &LossConfig, positive: bool) -> f64 {
    match cfg.positive_weight {
        Some(w) if positive => w,
        _ => 1.0,
    }
}

pub(crate) fn breakdown(l_cspca: f64, l_hmap: f64) -> LossBreakdown {
    LossBreakdown {
        l_cspca,
        l_hmap,
        total: l_cspca + l_hmap,
    }
}

/// Needle mask as normalized-later pixel weights for [`Graph::weighted_mean`].
pub(crate) fn mask_weights(mask: &Mask) -> Arc<Array2<f64>> {
    Arc::new(mask.mapv(|m| if m { 1.0 } else { 0.0 }))
}

/// Differentiable per-core loss terms. Returns the summed scalar plus the two term values.
pub(crate) fn sample_loss_graph(
    g: &mut Graph,
    out: &GraphOutput,
    labels: CoreLabels,
    weights: Arc<Array2<f64>>,
    involvement: f64,
    cfg: &LossConfig,
) -> (Option<Var>, f64, f64) {
    let mut terms = Vec::new();
    let (mut lc, mut lh) = (0.0, 0.0);
    if let Some(r) = out.risk {
        let target = if labels.is_cspca { 1.0 } else { 0.0 };
        let mut l = g.bce(r, target, EPS);
        let w = class_weight(cfg, labels.is_cspca);
        if w != 1.0 {
            l = g.scale(l, w);
        }
        lc = g.scalar(l);
        terms.push(l);
    }
    if let Some(h) = out.heatmap {
        let i_hat = g.weighted_mean(h, weights);
        let l = g.bce(i_hat, involvement, EPS);
        lh = g.scalar(l);
        terms.push(l);
    }
    let total = match terms.as_slice() {
        [] => None,
        [one] => Some(*one),
        [a, b] => Some(g.add(*a, *b)),
        _ => unreachable!("at most two heads"),
    };
    (total, lc, lh)
}

use std::collections::BTreeMap;

use super::config::BackboneConfig;
use crate::data::Marker;
use crate::error::{Error, Result};
use crate::nn::{Graph, Init, Mlp, ParamBuilder, Var};

/// Normalized marker values keyed by marker.
pub type MarkerValues = BTreeMap<Marker, f64>;

struct MarkerEmbedder {
    marker: Marker,
    mlp: Mlp,
    identity: usize,
}

/// One two-layer perceptron per enabled marker, lifting a scalar to an `embed_channels` row,
/// plus a learned identity embedding for that marker.
pub(crate) struct PromptEncoder {
    embedders: Vec<MarkerEmbedder>,
    channels: usize,
}

impl PromptEncoder {
    pub(crate) fn build(pb: &mut ParamBuilder, cfg: &BackboneConfig) -> Self {
        let c = cfg.embed_channels;
        let embedders = cfg
            .prompt_markers
            .iter()
            .map(|&marker| MarkerEmbedder {
                marker,
                mlp: Mlp::build(pb, &format!("prompt.{marker}"), 1, c, c),
                identity: pb.add(&format!("prompt.{marker}.identity"), 1, c, Init::TruncNormal(1.0)),
            })
            .collect();
        PromptEncoder { embedders, channels: c }
    }

    pub(crate) fn markers(&self) -> Vec<Marker> {
        self.embedders.iter().map(|e| e.marker).collect()
    }

    pub(crate) fn channels(&self) -> usize {
        self.channels
    }

    /// Returns `None` in prompt-free mode, otherwise an `N × C` matrix in configured marker order.
    pub(crate) fn forward(&self, g: &mut Graph, values: &MarkerValues) -> Result<Option<Var>> {
        let mut rows = Vec::with_capacity(self.embedders.len());
        for e in &self.embedders {
            let v = *values
                .get(&e.marker)
                .ok_or_else(|| Error::MissingMarker(e.marker.name().to_string()))?;
            if !v.is_finite() {
                return Err(Error::MissingMarker(e.marker.name().to_string()));
            }
            let x = g.constant(ndarray::Array2::from_elem((1, 1), v));
            let h = e.mlp.forward(g, x);
            let id = g.param(e.identity);
            rows.push(g.add(h, id));
        }
        Ok(match rows.len() {
            0 => None,
            1 => Some(rows[0]),
            _ => Some(g.concat_rows(&rows)),
        })
    }
}

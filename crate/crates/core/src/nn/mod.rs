//! Minimal dense autodiff and the layers the backbone is assembled from.

mod graph;
mod layers;
mod params;

pub use graph::{sigmoid, Grads, Graph, Mat, Var, GATHER_ZERO};
pub(crate) use graph::bce_value;
pub use layers::{Adapter, Attention, LayerNorm, Linear, Mlp};
pub use params::{Init, ParamBuilder, ParamSet};

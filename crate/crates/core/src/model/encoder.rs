use ndarray::Array2;

use super::config::{AdapterMode, BackboneConfig};
use crate::data::Image;
use crate::nn::{Adapter, Attention, Graph, Init, LayerNorm, Linear, Mlp, ParamBuilder, Var};

struct EncoderBlock {
    norm1: LayerNorm,
    attn: Attention,
    adapter_attn: Option<Adapter>,
    norm2: LayerNorm,
    mlp: Mlp,
    adapter_mlp: Option<Adapter>,
}

/// Patch-embedding vision transformer followed by a projection neck to `embed_channels`.
pub(crate) struct ImageEncoder {
    patch: usize,
    grid: usize,
    patch_embed: Linear,
    pos_embed: usize,
    blocks: Vec<EncoderBlock>,
    neck: Linear,
    neck_norm: LayerNorm,
}

impl ImageEncoder {
    pub(crate) fn build(pb: &mut ParamBuilder, cfg: &BackboneConfig) -> Self {
        let w = cfg.encoder_width;
        let p = cfg.patch_size;
        let tokens = cfg.embed_grid * cfg.embed_grid;
        let blocks = (0..cfg.encoder_depth)
            .map(|i| {
                let name = format!("encoder.blocks.{i}");
                let adapter = |pb: &mut ParamBuilder, which: &str| match cfg.adapter_mode {
                    AdapterMode::Adapters => Some(Adapter::build(
                        pb,
                        &format!("{name}.adapter_{which}"),
                        w,
                        cfg.adapter_bottleneck_dim,
                    )),
                    AdapterMode::FullFinetune => None,
                };
                EncoderBlock {
                    norm1: LayerNorm::build(pb, &format!("{name}.norm1"), w),
                    attn: Attention::build(pb, &format!("{name}.attn"), w, cfg.encoder_heads),
                    adapter_attn: adapter(pb, "attn"),
                    norm2: LayerNorm::build(pb, &format!("{name}.norm2"), w),
                    mlp: Mlp::build(pb, &format!("{name}.mlp"), w, cfg.encoder_mlp_dim, w),
                    adapter_mlp: adapter(pb, "mlp"),
                }
            })
            .collect();
        ImageEncoder {
            patch: p,
            grid: cfg.embed_grid,
            patch_embed: Linear::build(pb, "encoder.patch_embed", p * p, w),
            pos_embed: pb.add("encoder.pos_embed", tokens, w, Init::TruncNormal(0.02)),
            blocks,
            neck: Linear::build(pb, "encoder.neck", w, cfg.embed_channels),
            neck_norm: LayerNorm::build(pb, "encoder.neck_norm", cfg.embed_channels),
        }
    }

    /// Rearranges the image into `(grid², patch²)` rows, row-major over patches and pixels.
    pub(crate) fn patchify(&self, image: &Image) -> Array2<f64> {
        let (p, grid) = (self.patch, self.grid);
        Array2::from_shape_fn((grid * grid, p * p), |(t, k)| {
            let (gy, gx) = (t / grid, t % grid);
            let (dy, dx) = (k / p, k % p);
            f64::from(image[[gy * p + dy, gx * p + dx]])
        })
    }

    pub(crate) fn forward(&self, g: &mut Graph, image: &Image) -> Var {
        let patches = g.constant(self.patchify(image));
        let x = self.patch_embed.forward(g, patches);
        let pos = g.param(self.pos_embed);
        let mut x = g.add(x, pos);
        for block in &self.blocks {
            let h = block.norm1.forward(g, x);
            let mut h = block.attn.forward(g, h, h, h);
            if let Some(a) = &block.adapter_attn {
                h = a.forward(g, h);
            }
            x = g.add(x, h);
            let h = block.norm2.forward(g, x);
            let mut h = block.mlp.forward(g, h);
            if let Some(a) = &block.adapter_mlp {
                h = a.forward(g, h);
            }
            x = g.add(x, h);
        }
        let y = self.neck.forward(g, x);
        self.neck_norm.forward(g, y)
    }
}

use std::sync::Arc;

use ndarray::Array2;

use super::config::BackboneConfig;
use crate::data::bilinear_matrix;
use crate::nn::{Attention, Graph, Init, LayerNorm, Linear, Mlp, ParamBuilder, Var, GATHER_ZERO};

struct TwoWayBlock {
    self_attn: Attention,
    norm1: LayerNorm,
    token_to_image: Attention,
    norm2: LayerNorm,
    mlp: Mlp,
    norm3: LayerNorm,
    image_to_token: Attention,
    norm4: LayerNorm,
}

/// Token/image two-way attention stack. Tokens are one learned output token followed by the
/// prompt rows; image tokens carry a learned dense positional embedding.
pub(crate) struct TwoWayTransformer {
    output_token: usize,
    image_pe: usize,
    blocks: Vec<TwoWayBlock>,
    final_attn: Option<(Attention, LayerNorm)>,
}

impl TwoWayTransformer {
    pub(crate) fn build(pb: &mut ParamBuilder, prefix: &str, cfg: &BackboneConfig, final_attn: bool) -> Self {
        let c = cfg.embed_channels;
        let heads = cfg.decoder_heads;
        let blocks = (0..cfg.decoder_depth)
            .map(|i| {
                let n = format!("{prefix}.blocks.{i}");
                TwoWayBlock {
                    self_attn: Attention::build(pb, &format!("{n}.self_attn"), c, heads),
                    norm1: LayerNorm::build(pb, &format!("{n}.norm1"), c),
                    token_to_image: Attention::build(pb, &format!("{n}.token_to_image"), c, heads),
                    norm2: LayerNorm::build(pb, &format!("{n}.norm2"), c),
                    mlp: Mlp::build(pb, &format!("{n}.mlp"), c, cfg.decoder_mlp_dim, c),
                    norm3: LayerNorm::build(pb, &format!("{n}.norm3"), c),
                    image_to_token: Attention::build(pb, &format!("{n}.image_to_token"), c, heads),
                    norm4: LayerNorm::build(pb, &format!("{n}.norm4"), c),
                }
            })
            .collect();
        let tokens = cfg.embed_grid * cfg.embed_grid;
        TwoWayTransformer {
            output_token: pb.add(&format!("{prefix}.output_token"), 1, c, Init::TruncNormal(1.0)),
            image_pe: pb.add(&format!("{prefix}.image_pe"), tokens, c, Init::TruncNormal(0.02)),
            blocks,
            final_attn: final_attn.then(|| {
                (
                    Attention::build(pb, &format!("{prefix}.final_attn"), c, heads),
                    LayerNorm::build(pb, &format!("{prefix}.final_norm"), c),
                )
            }),
        }
    }

    /// Returns the updated `(tokens, image)` pair.
    pub(crate) fn forward(&self, g: &mut Graph, image: Var, prompts: Option<Var>) -> (Var, Var) {
        let out_tok = g.param(self.output_token);
        let token_pe = match prompts {
            Some(p) => g.concat_rows(&[out_tok, p]),
            None => out_tok,
        };
        let image_pe = g.param(self.image_pe);
        let mut queries = token_pe;
        let mut keys = image;
        for b in &self.blocks {
            let q = g.add(queries, token_pe);
            let h = b.self_attn.forward(g, q, q, queries);
            let x = g.add(queries, h);
            queries = b.norm1.forward(g, x);

            let q = g.add(queries, token_pe);
            let k = g.add(keys, image_pe);
            let h = b.token_to_image.forward(g, q, k, keys);
            let x = g.add(queries, h);
            queries = b.norm2.forward(g, x);

            let h = b.mlp.forward(g, queries);
            let x = g.add(queries, h);
            queries = b.norm3.forward(g, x);

            let q = g.add(queries, token_pe);
            let k = g.add(keys, image_pe);
            let h = b.image_to_token.forward(g, k, q, queries);
            let x = g.add(keys, h);
            keys = b.norm4.forward(g, x);
        }
        if let Some((attn, norm)) = &self.final_attn {
            let q = g.add(queries, token_pe);
            let k = g.add(keys, image_pe);
            let h = attn.forward(g, q, k, keys);
            let x = g.add(queries, h);
            queries = norm.forward(g, x);
        }
        (queries, keys)
    }
}

/// Gather table for a stride-2, kernel-2 transposed convolution whose per-pixel products are
/// laid out as `(h·w, 4·c)` with sub-pixel blocks ordered `(dy, dx)`.
fn pixel_shuffle_table(h: usize, w: usize, c: usize) -> Arc<[u32]> {
    let (oh, ow) = (2 * h, 2 * w);
    let mut t = Vec::with_capacity(oh * ow * c);
    for y in 0..oh {
        for x in 0..ow {
            let src_row = (y / 2) * w + x / 2;
            let sub = (y % 2) * 2 + x % 2;
            for ch in 0..c {
                t.push((src_row * 4 * c + sub * c + ch) as u32);
            }
        }
    }
    t.into()
}

/// Gather table producing 3×3 zero-padded patches `(h·w, 9·c)` from an `(h·w, c)` map.
fn im2col3_table(h: usize, w: usize, c: usize) -> Arc<[u32]> {
    let mut t = Vec::with_capacity(h * w * 9 * c);
    for y in 0..h as isize {
        for x in 0..w as isize {
            for ky in -1..=1isize {
                for kx in -1..=1isize {
                    let (sy, sx) = (y + ky, x + kx);
                    let inside = sy >= 0 && sx >= 0 && sy < h as isize && sx < w as isize;
                    for ch in 0..c {
                        t.push(if inside {
                            ((sy as usize * w + sx as usize) * c + ch) as u32
                        } else {
                            GATHER_ZERO
                        });
                    }
                }
            }
        }
    }
    t.into()
}

/// Two-way transformer, two stride-2 transposed convolutions, a stride-1 3×3 projection to one
/// logit per pixel and, when the upsampled grid is coarser than the image, a fixed bilinear resize.
pub(crate) struct MaskDecoder {
    transformer: TwoWayTransformer,
    up1: Linear,
    up1_norm: LayerNorm,
    up2: Linear,
    pub(crate) project: Linear,
    grid: usize,
    c1: usize,
    c2: usize,
    shuffle1: Arc<[u32]>,
    shuffle2: Arc<[u32]>,
    im2col: Arc<[u32]>,
    resize: Option<(Arc<Array2<f64>>, Arc<Array2<f64>>)>,
}

impl MaskDecoder {
    pub(crate) fn build(pb: &mut ParamBuilder, cfg: &BackboneConfig) -> Self {
        let c = cfg.embed_channels;
        let (c1, c2) = (c / 4, c / 8);
        let grid = cfg.embed_grid;
        let up = cfg.upscaled_grid();
        let resize = (up != cfg.image_size).then(|| {
            let m = bilinear_matrix(up, cfg.image_size);
            (Arc::new(m.clone()), Arc::new(m.t().to_owned()))
        });
        MaskDecoder {
            transformer: TwoWayTransformer::build(pb, "mask_decoder", cfg, false),
            up1: Linear::build(pb, "mask_decoder.upscale1", c, 4 * c1),
            up1_norm: LayerNorm::build(pb, "mask_decoder.upscale1_norm", c1),
            up2: Linear::build(pb, "mask_decoder.upscale2", c1, 4 * c2),
            project: Linear::build(pb, "mask_decoder.project", 9 * c2, 1),
            grid,
            c1,
            c2,
            shuffle1: pixel_shuffle_table(grid, grid, c1),
            shuffle2: pixel_shuffle_table(2 * grid, 2 * grid, c2),
            im2col: im2col3_table(up, up, c2),
            resize,
        }
    }

    /// Heatmap logits, `image_size × image_size`.
    pub(crate) fn logits(&self, g: &mut Graph, image: Var, prompts: Option<Var>) -> Var {
        let (_, keys) = self.transformer.forward(g, image, prompts);
        let n = self.grid;
        let x = self.up1.forward(g, keys);
        let x = g.gather(x, self.shuffle1.clone(), 4 * n * n, self.c1);
        let x = self.up1_norm.forward(g, x);
        let x = g.gelu(x);
        let x = self.up2.forward(g, x);
        let x = g.gather(x, self.shuffle2.clone(), 16 * n * n, self.c2);
        let x = g.gelu(x);
        let x = g.gather(x, self.im2col.clone(), 16 * n * n, 9 * self.c2);
        let x = self.project.forward(g, x);
        let x = g.reshape(x, 4 * n, 4 * n);
        match &self.resize {
            None => x,
            Some((rows, cols_t)) => {
                let r = g.constant((**rows).clone());
                let ct = g.constant((**cols_t).clone());
                let y = g.matmul(r, x);
                g.matmul(y, ct)
            }
        }
    }
}

/// Same two-way transformer followed by a final token attention and a linear read-out of the
/// output token.
pub(crate) struct ClassDecoder {
    transformer: TwoWayTransformer,
    pub(crate) head: Linear,
}

impl ClassDecoder {
    pub(crate) fn build(pb: &mut ParamBuilder, cfg: &BackboneConfig) -> Self {
        ClassDecoder {
            transformer: TwoWayTransformer::build(pb, "class_decoder", cfg, true),
            head: Linear::build(pb, "class_decoder.head", cfg.embed_channels, 1),
        }
    }

    /// Risk logit as a `1×1` value.
    pub(crate) fn logit(&self, g: &mut Graph, image: Var, prompts: Option<Var>) -> Var {
        let (queries, _) = self.transformer.forward(g, image, prompts);
        let token = g.slice_rows(queries, 0, 1);
        self.head.forward(g, token)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pixel_shuffle_places_subpixels() {
        // 1×1 input with 2 channels; products laid out as [(0,0) c0 c1, (0,1) c0 c1, (1,0).., (1,1)..]
        let t = pixel_shuffle_table(1, 1, 2);
        assert_eq!(&*t, &[0, 1, 2, 3, 4, 5, 6, 7]);
        let t = pixel_shuffle_table(1, 2, 1);
        // output 2×4; row 0: (src0,sub0) (src0,sub1) (src1,sub0) (src1,sub1)
        assert_eq!(&t[..4], &[0, 1, 4, 5]);
        assert_eq!(&t[4..], &[2, 3, 6, 7]);
    }

    #[test]
    fn im2col_pads_with_zeros() {
        let t = im2col3_table(2, 2, 1);
        // pixel (0,0): taps rows -1 (3 zeros), row 0: zero, self(0), right(1), row 1: zero, 2, 3
        assert_eq!(
            &t[..9],
            &[GATHER_ZERO, GATHER_ZERO, GATHER_ZERO, GATHER_ZERO, 0, 1, GATHER_ZERO, 2, 3]
        );
    }
}

//! The prompt-conditioned backbone: image encoder, clinical prompt encoder, heatmap decoder
//! and risk decoder.

mod checkpoint;
mod config;
mod decoder;
mod encoder;
mod prompt;

use ndarray::{Array2, Array3};

pub use checkpoint::{
    checkpoint_roundtrip, load_checkpoint, load_checkpoint_expecting, save_checkpoint, Checkpoint,
};
pub use config::{AdapterMode, BackboneConfig, HeadMode};
pub use prompt::MarkerValues;

use self::decoder::{ClassDecoder, MaskDecoder};
use self::encoder::ImageEncoder;
use self::prompt::PromptEncoder;
use crate::data::{normalize_marker, Image, Marker, MarkerStats, Subject};
use crate::error::{Error, Result};
use crate::nn::{Graph, ParamBuilder, ParamSet, Var};

/// Image embedding stored as `(grid_h·grid_w) × channels`, pixel rows in row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageEmbedding {
    pub grid_h: usize,
    pub grid_w: usize,
    pub data: Array2<f64>,
}

impl ImageEmbedding {
    pub fn channels(&self) -> usize {
        self.data.ncols()
    }

    /// `(channels, grid_h, grid_w)`
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels(), self.grid_h, self.grid_w)
    }

    pub fn to_chw(&self) -> Array3<f64> {
        let (c, h, w) = self.shape();
        Array3::from_shape_fn((c, h, w), |(k, y, x)| self.data[[y * w + x, k]])
    }
}

/// `N × channels`, one row per enabled marker in configuration order.
#[derive(Clone, Debug, PartialEq)]
pub struct PromptEmbedding {
    pub markers: Vec<Marker>,
    pub data: Array2<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelOutput {
    /// Per-pixel cancer likelihood, `image_size × image_size`.
    pub heatmap: Option<Array2<f64>>,
    /// csPCa probability.
    pub risk: Option<f64>,
}

/// Graph handles for one forward pass.
pub struct GraphOutput {
    pub heatmap: Option<Var>,
    pub risk: Option<Var>,
}

pub struct Backbone {
    config: BackboneConfig,
    encoder: ImageEncoder,
    prompt: PromptEncoder,
    mask_decoder: Option<MaskDecoder>,
    class_decoder: Option<ClassDecoder>,
}

impl Backbone {
    /// Builds the network and freshly initialized parameters.
    pub fn new(config: BackboneConfig, seed: u64) -> Result<(Self, ParamSet)> {
        config.validate()?;
        let mut pb = ParamBuilder::new(seed);
        let encoder = ImageEncoder::build(&mut pb, &config);
        let prompt = PromptEncoder::build(&mut pb, &config);
        let mask_decoder = config.head_mode.has_heatmap().then(|| MaskDecoder::build(&mut pb, &config));
        let class_decoder = config.head_mode.has_risk().then(|| ClassDecoder::build(&mut pb, &config));
        let model = Backbone {
            config,
            encoder,
            prompt,
            mask_decoder,
            class_decoder,
        };
        Ok((model, pb.finish()))
    }

    /// Builds the network for an existing parameter set, checking names and shapes.
    pub fn bind(config: BackboneConfig, params: &ParamSet) -> Result<Self> {
        let (model, fresh) = Backbone::new(config, 0)?;
        if fresh.len() != params.len() {
            return Err(Error::Checkpoint(format!(
                "parameter count {} does not match the configuration ({})",
                params.len(),
                fresh.len()
            )));
        }
        for (i, (name, value)) in fresh.iter().enumerate() {
            if params.name(i) != name || params.value(i).dim() != value.dim() {
                return Err(Error::Checkpoint(format!(
                    "parameter {i}: found `{}` {:?}, expected `{name}` {:?}",
                    params.name(i),
                    params.value(i).dim(),
                    value.dim()
                )));
            }
        }
        Ok(model)
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.config
    }

    /// Which parameters the optimizer may update: everything, or in adapter mode everything
    /// outside the encoder plus the encoder's adapters.
    pub fn trainable_mask(&self, params: &ParamSet) -> Vec<bool> {
        (0..params.len())
            .map(|i| {
                let name = params.name(i);
                match self.config.adapter_mode {
                    AdapterMode::FullFinetune => true,
                    AdapterMode::Adapters => !name.starts_with("encoder.") || name.contains(".adapter_"),
                }
            })
            .collect()
    }

    fn check_image(&self, image: &Image) -> Result<()> {
        let s = self.config.image_size;
        if image.dim() != (s, s) {
            return Err(Error::invalid(format!("image is {:?}, model expects {s}×{s}", image.dim())));
        }
        if image.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("image contains non-finite values"));
        }
        Ok(())
    }

    /// Normalized prompt inputs for `subject`, in the configured marker set.
    pub fn marker_values(&self, subject: &Subject, stats: &MarkerStats) -> Result<MarkerValues> {
        self.config
            .prompt_markers
            .iter()
            .map(|&m| Ok((m, normalize_marker(subject.marker(m), stats, m.name())?)))
            .collect()
    }

    pub fn encode_image(&self, params: &ParamSet, image: &Image) -> Result<ImageEmbedding> {
        self.check_image(image)?;
        let mut g = Graph::inference(params);
        let v = self.encoder.forward(&mut g, image);
        Ok(ImageEmbedding {
            grid_h: self.config.embed_grid,
            grid_w: self.config.embed_grid,
            data: g.value(v).clone(),
        })
    }

    pub fn encode_prompts(&self, params: &ParamSet, markers: &MarkerValues) -> Result<PromptEmbedding> {
        let mut g = Graph::inference(params);
        let data = match self.prompt.forward(&mut g, markers)? {
            Some(v) => g.value(v).clone(),
            None => Array2::zeros((0, self.prompt.channels())),
        };
        Ok(PromptEmbedding {
            markers: self.prompt.markers(),
            data,
        })
    }

    fn check_embeddings(&self, img: &ImageEmbedding, prompts: &PromptEmbedding) -> Result<()> {
        let c = self.config.embed_channels;
        let g = self.config.embed_grid;
        if img.shape() != (c, g, g) || img.data.nrows() != g * g {
            return Err(Error::invalid(format!(
                "image embedding {:?} does not match ({c}, {g}, {g})",
                img.shape()
            )));
        }
        if prompts.data.ncols() != c {
            return Err(Error::invalid(format!(
                "prompt embedding has {} channels, expected {c}",
                prompts.data.ncols()
            )));
        }
        Ok(())
    }

    fn embedding_vars(&self, g: &mut Graph, img: &ImageEmbedding, prompts: &PromptEmbedding) -> (Var, Option<Var>) {
        let iv = g.constant(img.data.clone());
        let pv = (prompts.data.nrows() > 0).then(|| g.constant(prompts.data.clone()));
        (iv, pv)
    }

    pub fn decode_heatmap(
        &self,
        params: &ParamSet,
        img: &ImageEmbedding,
        prompts: &PromptEmbedding,
    ) -> Result<Array2<f64>> {
        self.check_embeddings(img, prompts)?;
        let dec = self
            .mask_decoder
            .as_ref()
            .ok_or_else(|| Error::config("model has no heatmap head"))?;
        let mut g = Graph::inference(params);
        let (iv, pv) = self.embedding_vars(&mut g, img, prompts);
        let logits = dec.logits(&mut g, iv, pv);
        let h = g.sigmoid(logits);
        Ok(g.value(h).clone())
    }

    pub fn decode_risk(&self, params: &ParamSet, img: &ImageEmbedding, prompts: &PromptEmbedding) -> Result<f64> {
        self.check_embeddings(img, prompts)?;
        let dec = self
            .class_decoder
            .as_ref()
            .ok_or_else(|| Error::config("model has no risk head"))?;
        let mut g = Graph::inference(params);
        let (iv, pv) = self.embedding_vars(&mut g, img, prompts);
        let logit = dec.logit(&mut g, iv, pv);
        let r = g.sigmoid(logit);
        Ok(g.scalar(r))
    }

    pub fn forward_graph(&self, g: &mut Graph, image: &Image, markers: &MarkerValues) -> Result<GraphOutput> {
        self.check_image(image)?;
        let emb = self.encoder.forward(g, image);
        let prompts = self.prompt.forward(g, markers)?;
        let heatmap = self.mask_decoder.as_ref().map(|d| {
            let l = d.logits(g, emb, prompts);
            g.sigmoid(l)
        });
        let risk = self.class_decoder.as_ref().map(|d| {
            let l = d.logit(g, emb, prompts);
            g.sigmoid(l)
        });
        Ok(GraphOutput { heatmap, risk })
    }

    pub fn forward(&self, params: &ParamSet, image: &Image, markers: &MarkerValues) -> Result<ModelOutput> {
        let mut g = Graph::inference(params);
        let out = self.forward_graph(&mut g, image, markers)?;
        Ok(ModelOutput {
            heatmap: out.heatmap.map(|h| g.value(h).clone()),
            risk: out.risk.map(|r| g.scalar(r)),
        })
    }

    /// Zeroes the heatmap head's final projection (weights and bias).
    pub fn zero_heatmap_projection(&self, params: &mut ParamSet) {
        if let Some(d) = &self.mask_decoder {
            params.value_mut(d.project.weight).fill(0.0);
            if let Some(b) = d.project.bias {
                params.value_mut(b).fill(0.0);
            }
        }
    }

    /// Zeroes the risk head's final linear layer.
    pub fn zero_risk_head(&self, params: &mut ParamSet) {
        if let Some(d) = &self.class_decoder {
            params.value_mut(d.head.weight).fill(0.0);
            if let Some(b) = d.head.bias {
                params.value_mut(b).fill(0.0);
            }
        }
    }
}

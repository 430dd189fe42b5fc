use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::data::{Marker, IMAGE_SIZE};
use crate::error::{Error, Result};

/// Which output heads a model carries.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadMode {
    #[default]
    Both,
    MaskOnly,
    ClassOnly,
}

impl HeadMode {
    pub fn has_heatmap(self) -> bool {
        matches!(self, HeadMode::Both | HeadMode::MaskOnly)
    }

    pub fn has_risk(self) -> bool {
        matches!(self, HeadMode::Both | HeadMode::ClassOnly)
    }

    pub fn name(self) -> &'static str {
        match self {
            HeadMode::Both => "both",
            HeadMode::MaskOnly => "mask_only",
            HeadMode::ClassOnly => "class_only",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "both" => Ok(HeadMode::Both),
            "mask_only" => Ok(HeadMode::MaskOnly),
            "class_only" => Ok(HeadMode::ClassOnly),
            other => Err(Error::config(format!(
                "unknown head mode `{other}` (expected both, mask_only or class_only)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdapterMode {
    #[default]
    FullFinetune,
    /// Residual bottleneck adapters in every encoder block; the rest of the encoder is frozen.
    Adapters,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneConfig {
    pub image_size: usize,
    pub patch_size: usize,
    pub encoder_depth: usize,
    pub encoder_width: usize,
    pub encoder_heads: usize,
    pub encoder_mlp_dim: usize,
    /// Channels of the image embedding and of every prompt row.
    pub embed_channels: usize,
    /// Side of the square embedding grid; must equal `image_size / patch_size`.
    pub embed_grid: usize,
    pub prompt_markers: Vec<Marker>,
    pub decoder_depth: usize,
    pub decoder_heads: usize,
    pub decoder_mlp_dim: usize,
    pub head_mode: HeadMode,
    pub adapter_mode: AdapterMode,
    pub adapter_bottleneck_dim: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self::full_scale()
    }
}

impl BackboneConfig {
    /// Full-size interfaces: 256×256 input, 256×64×64 embeddings, 256-d prompts and a
    /// 256×256 heatmap. The encoder trunk is kept narrow; depth and width are free parameters.
    pub fn full_scale() -> Self {
        BackboneConfig {
            image_size: IMAGE_SIZE,
            patch_size: 4,
            encoder_depth: 1,
            encoder_width: 32,
            encoder_heads: 1,
            encoder_mlp_dim: 64,
            embed_channels: 256,
            embed_grid: 64,
            prompt_markers: vec![Marker::Age, Marker::Psa],
            decoder_depth: 2,
            decoder_heads: 8,
            decoder_mlp_dim: 2048,
            head_mode: HeadMode::Both,
            adapter_mode: AdapterMode::FullFinetune,
            adapter_bottleneck_dim: 16,
        }
    }

    /// Desk-scale model that trains on a CPU in minutes.
    pub fn toy() -> Self {
        BackboneConfig {
            image_size: IMAGE_SIZE,
            patch_size: 16,
            encoder_depth: 1,
            encoder_width: 16,
            encoder_heads: 2,
            encoder_mlp_dim: 32,
            embed_channels: 16,
            embed_grid: 16,
            prompt_markers: vec![Marker::Age, Marker::Psa],
            decoder_depth: 1,
            decoder_heads: 2,
            decoder_mlp_dim: 32,
            head_mode: HeadMode::Both,
            adapter_mode: AdapterMode::FullFinetune,
            adapter_bottleneck_dim: 4,
        }
    }

    /// A few-thousand-parameter model on 32×32 inputs, small enough for exhaustive gradient checks.
    pub fn tiny() -> Self {
        BackboneConfig {
            image_size: 32,
            patch_size: 8,
            encoder_depth: 1,
            encoder_width: 8,
            encoder_heads: 2,
            encoder_mlp_dim: 16,
            embed_channels: 8,
            embed_grid: 4,
            prompt_markers: vec![Marker::Age, Marker::Psa],
            decoder_depth: 1,
            decoder_heads: 2,
            decoder_mlp_dim: 16,
            head_mode: HeadMode::Both,
            adapter_mode: AdapterMode::FullFinetune,
            adapter_bottleneck_dim: 2,
        }
    }

    pub fn with_markers(mut self, markers: Vec<Marker>) -> Self {
        self.prompt_markers = markers;
        self
    }

    pub fn with_head_mode(mut self, mode: HeadMode) -> Self {
        self.head_mode = mode;
        self
    }

    pub fn with_adapters(mut self, bottleneck: usize) -> Self {
        self.adapter_mode = AdapterMode::Adapters;
        self.adapter_bottleneck_dim = bottleneck;
        self
    }

    /// Resolution of the transposed-convolution output before the final resize.
    pub fn upscaled_grid(&self) -> usize {
        self.embed_grid * 4
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::config(m));
        if self.patch_size == 0 || self.image_size == 0 || self.image_size % self.patch_size != 0 {
            return fail(format!(
                "image_size {} must be a positive multiple of patch_size {}",
                self.image_size, self.patch_size
            ));
        }
        if self.embed_grid != self.image_size / self.patch_size {
            return fail(format!(
                "embed_grid {} inconsistent with image_size/patch_size = {}",
                self.embed_grid,
                self.image_size / self.patch_size
            ));
        }
        if self.upscaled_grid() > self.image_size {
            return fail(format!(
                "heatmap upsampling reaches {} which exceeds image_size {}",
                self.upscaled_grid(),
                self.image_size
            ));
        }
        if self.encoder_width == 0 || self.encoder_heads == 0 || self.encoder_width % self.encoder_heads != 0 {
            return fail(format!(
                "encoder_width {} must be divisible by encoder_heads {}",
                self.encoder_width, self.encoder_heads
            ));
        }
        if self.embed_channels == 0 || self.embed_channels % 8 != 0 {
            return fail(format!("embed_channels {} must be a positive multiple of 8", self.embed_channels));
        }
        if self.decoder_heads == 0 || self.embed_channels % self.decoder_heads != 0 {
            return fail(format!(
                "embed_channels {} must be divisible by decoder_heads {}",
                self.embed_channels, self.decoder_heads
            ));
        }
        if self.encoder_mlp_dim == 0 || self.decoder_mlp_dim == 0 {
            return fail("MLP widths must be positive".into());
        }
        let unique: BTreeSet<_> = self.prompt_markers.iter().collect();
        if unique.len() != self.prompt_markers.len() {
            return fail(format!("duplicate prompt markers in {:?}", self.prompt_markers));
        }
        if self.adapter_mode == AdapterMode::Adapters && self.adapter_bottleneck_dim == 0 {
            return fail("adapter_bottleneck_dim must be positive in adapter mode".into());
        }
        Ok(())
    }

    /// Human-readable list of fields that differ from `other`.
    pub fn differences(&self, other: &BackboneConfig) -> Vec<String> {
        let a = serde_json::to_value(self).expect("config serializes");
        let b = serde_json::to_value(other).expect("config serializes");
        let (a, b) = (a.as_object().expect("struct"), b.as_object().expect("struct"));
        a.iter()
            .filter(|(k, v)| b.get(*k) != Some(v))
            .map(|(k, v)| format!("{k}: {} vs {}", v, b.get(k).cloned().unwrap_or_default()))
            .collect()
    }
}

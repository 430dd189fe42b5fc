//! Builds each backbone preset and runs one prompted forward pass.
//!
//! cargo run --release --example backbone_forward

use std::time::Instant;

use ndarray::Array2;
use pnf::model::{Backbone, BackboneConfig, MarkerValues};

fn main() -> pnf::Result<()> {
    for (name, cfg) in [
        ("tiny", BackboneConfig::tiny()),
        ("toy", BackboneConfig::toy()),
        ("full_scale", BackboneConfig::full_scale()),
    ] {
        let (model, params) = Backbone::new(cfg.clone(), 0)?;
        let n = cfg.image_size;
        let image = Array2::from_shape_fn((n, n), |(r, c)| ((r * 31 + c * 17) % 255) as f32 / 255.0);
        let markers: MarkerValues = cfg.prompt_markers.iter().map(|&m| (m, 0.5)).collect();
        let start = Instant::now();
        let emb = model.encode_image(&params, &image)?;
        let out = model.forward(&params, &image, &markers)?;
        println!(
            "{name:>11}: {:>9} params, embedding {:?}, heatmap {:?}, risk {:?}, {:.2}s",
            params.num_scalars(),
            emb.shape(),
            out.heatmap.as_ref().map(|h| h.dim()),
            out.risk,
            start.elapsed().as_secs_f64()
        );
    }
    Ok(())
}

#![allow(dead_code)]

use std::io::Write;

use ndarray::Array2;
use pnf::data::{grade_to_labels, Marker};
use pnf::model::{Backbone, BackboneConfig, MarkerValues};
use pnf::nn::ParamSet;
use pnf::objective::{total_loss, LossConfig, LossSample};
use pnf::trainer::batch_gradients;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Writes straight to the process stdout so the line shows up even when the harness
/// captures test output.
pub fn report(criterion: u32, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "[criterion {criterion:>2}] {verdict}: {detail}");
    let _ = out.flush();
}

pub struct GradSample {
    pub image: Array2<f32>,
    pub mask: Array2<bool>,
    pub gg: u8,
    pub involvement: f64,
    pub markers: MarkerValues,
}

pub fn grad_samples(size: usize, seed: u64) -> Vec<GradSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    [(3u8, 0.4), (0u8, 0.0), (2u8, 0.75)]
        .into_iter()
        .map(|(gg, involvement)| {
            let col = rng.random_range(4..size - 8);
            GradSample {
                image: Array2::from_shape_fn((size, size), |_| rng.random::<f32>()),
                mask: Array2::from_shape_fn((size, size), |(r, c)| r >= 6 && r < size - 6 && c >= col && c < col + 3),
                gg,
                involvement,
                markers: [(Marker::Age, rng.random_range(-2.0..2.0)), (Marker::Psa, rng.random_range(-2.0..2.0))]
                    .into_iter()
                    .collect(),
            }
        })
        .collect()
}

fn numeric_loss(model: &Backbone, params: &ParamSet, samples: &[GradSample]) -> f64 {
    let outputs: Vec<_> = samples
        .iter()
        .map(|s| model.forward(params, &s.image, &s.markers).unwrap())
        .collect();
    let batch: Vec<LossSample> = samples
        .iter()
        .zip(&outputs)
        .map(|(s, o)| LossSample {
            output: o,
            labels: grade_to_labels(s.gg).unwrap(),
            needle_mask: &s.mask,
            involvement: s.involvement,
        })
        .collect();
    total_loss(&batch, &LossConfig::default()).unwrap().total
}

pub struct GradCheck {
    pub n_params: usize,
    pub coordinates: usize,
    pub max_rel_error: f64,
    pub worst: String,
}

/// Compares backpropagated gradients of the batch loss with central differences at
/// `coordinates` random scalar parameters.
pub fn gradient_check(cfg: BackboneConfig, coordinates: usize, seed: u64) -> GradCheck {
    let (model, params) = Backbone::new(cfg.clone(), seed).unwrap();
    let samples = grad_samples(cfg.image_size, seed);
    let trainable = vec![true; params.len()];
    let batch: Vec<_> = samples
        .iter()
        .map(|s| (s.image.clone(), s.mask.clone(), grade_to_labels(s.gg).unwrap(), s.involvement, &s.markers))
        .collect();
    let (_, grads) = batch_gradients(&model, &params, &trainable, &batch, &LossConfig::default()).unwrap();

    let sizes: Vec<usize> = params.iter().map(|(_, v)| v.len()).collect();
    let total: usize = sizes.iter().sum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let h = 1e-5;
    let mut max_rel = 0.0f64;
    let mut worst = String::new();
    for _ in 0..coordinates {
        let mut flat = rng.random_range(0..total);
        let mut id = 0;
        while flat >= sizes[id] {
            flat -= sizes[id];
            id += 1;
        }
        let cols = params.value(id).ncols();
        let (r, c) = (flat / cols, flat % cols);
        let analytic = grads[id].as_ref().map_or(0.0, |g| g[[r, c]]);
        let mut plus = params.clone();
        plus.value_mut(id)[[r, c]] += h;
        let mut minus = params.clone();
        minus.value_mut(id)[[r, c]] -= h;
        let numeric = (numeric_loss(&model, &plus, &samples) - numeric_loss(&model, &minus, &samples)) / (2.0 * h);
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
        if rel > max_rel {
            max_rel = rel;
            worst = format!("{}[{r},{c}] analytic {analytic:e} numeric {numeric:e}", params.name(id));
        }
    }
    GradCheck {
        n_params: params.num_scalars(),
        coordinates,
        max_rel_error: max_rel,
        worst,
    }
}

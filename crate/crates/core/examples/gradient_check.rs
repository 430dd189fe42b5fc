//! Backpropagated gradients of the training loss against central finite differences.
//!
//! cargo run --release --example gradient_check -- [coordinates]

use ndarray::Array2;
use pnf::data::{grade_to_labels, Marker};
use pnf::model::{Backbone, BackboneConfig, MarkerValues};
use pnf::nn::ParamSet;
use pnf::objective::{total_loss, LossConfig, LossSample};
use pnf::trainer::batch_gradients;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Sample {
    image: Array2<f32>,
    mask: Array2<bool>,
    gg: u8,
    involvement: f64,
    markers: MarkerValues,
}

fn loss(model: &Backbone, params: &ParamSet, samples: &[Sample]) -> f64 {
    let outputs: Vec<_> = samples.iter().map(|s| model.forward(params, &s.image, &s.markers).unwrap()).collect();
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

fn main() -> pnf::Result<()> {
    let coordinates: usize = std::env::args().nth(1).map_or(20, |s| s.parse().expect("coordinates"));
    let cfg = BackboneConfig::tiny();
    let (model, params) = Backbone::new(cfg.clone(), 7)?;
    let n = cfg.image_size;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let samples: Vec<Sample> = [(4u8, 0.6), (0, 0.0)]
        .into_iter()
        .map(|(gg, involvement)| Sample {
            image: Array2::from_shape_fn((n, n), |_| rng.random::<f32>()),
            mask: Array2::from_shape_fn((n, n), |(r, c)| r > 4 && r < n - 4 && c.abs_diff(n / 2) < 2),
            gg,
            involvement,
            markers: [(Marker::Age, rng.random_range(-1.0..1.0)), (Marker::Psa, rng.random_range(-1.0..1.0))]
                .into_iter()
                .collect(),
        })
        .collect();

    let batch: Vec<_> = samples
        .iter()
        .map(|s| (s.image.clone(), s.mask.clone(), grade_to_labels(s.gg).unwrap(), s.involvement, &s.markers))
        .collect();
    let (breakdown, grads) = batch_gradients(&model, &params, &vec![true; params.len()], &batch, &LossConfig::default())?;
    println!("{} parameters, loss {:.6}", params.num_scalars(), breakdown.total);

    let h = 1e-5;
    let mut worst = 0.0f64;
    for _ in 0..coordinates {
        let id = rng.random_range(0..params.len());
        let (rows, cols) = params.value(id).dim();
        let (r, c) = (rng.random_range(0..rows), rng.random_range(0..cols));
        let analytic = grads[id].as_ref().map_or(0.0, |g| g[[r, c]]);
        let mut plus = params.clone();
        plus.value_mut(id)[[r, c]] += h;
        let mut minus = params.clone();
        minus.value_mut(id)[[r, c]] -= h;
        let numeric = (loss(&model, &plus, &samples) - loss(&model, &minus, &samples)) / (2.0 * h);
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max(rel);
        println!("{:>40}[{r},{c}] analytic {analytic:+.6e} numeric {numeric:+.6e} rel {rel:.1e}", params.name(id));
    }
    println!("max relative error {worst:.2e}");
    Ok(())
}

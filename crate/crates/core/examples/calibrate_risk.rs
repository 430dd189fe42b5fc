//! Histogram matching of risk probabilities onto a 1–5 reference distribution.
//!
//! cargo run --example calibrate_risk

use pnf::metrics::threshold_at_specificity;
use pnf::riskscore::{discretize, fit_bins, patient_max_score};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> pnf::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    // stand-in for out-of-fold risk probabilities: positives skew high
    let labels: Vec<bool> = (0..500).map(|_| rng.random_bool(0.2)).collect();
    let scores: Vec<f64> = labels
        .iter()
        .map(|&l| {
            let u: f64 = rng.random();
            if l { u.sqrt() } else { u * u }
        })
        .collect();
    let reference: Vec<u8> = [(1u8, 30), (2, 25), (3, 20), (4, 15), (5, 10)]
        .iter()
        .flat_map(|&(g, n)| std::iter::repeat_n(g, n))
        .collect();

    let mut bins = fit_bins(&scores, &reference)?;
    let op = threshold_at_specificity(&scores, &labels, 0.7)?;
    bins.provenance.operating_threshold = op.threshold;
    bins.provenance.operating_specificity = Some(0.7);
    bins.provenance.source = "simulated risk probabilities".into();
    println!("{}", serde_json::to_string_pretty(&bins)?);

    let mut hist = [0usize; 5];
    for &s in &scores {
        hist[usize::from(discretize(s, &bins)?) - 1] += 1;
    }
    println!("grade occupancy: {:?}", hist.map(|n| n as f64 / scores.len() as f64));
    println!("operating point at 70% specificity: {op:?}");

    let cores: Vec<u8> = scores[..8].iter().map(|&s| discretize(s, &bins)).collect::<pnf::Result<_>>()?;
    println!("cores {cores:?} -> patient score {}", patient_max_score(&cores)?);
    Ok(())
}

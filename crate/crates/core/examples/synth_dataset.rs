//! Generates a small synthetic dataset, writes it to disk and reloads it.
//!
//! cargo run --example synth_dataset -- [out_dir]

use std::path::PathBuf;

use pnf::data::{load_dataset, Category};
use pnf::synth::{synthesize, GenConfig};

fn main() -> pnf::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map_or_else(|| std::env::temp_dir().join("pnf-synth-example"), PathBuf::from);
    let cfg = GenConfig {
        n_subjects: 20,
        cores_per_subject: 8,
        seed: 1,
        ..GenConfig::default()
    };
    let (dataset, manifest) = synthesize(&cfg, &out)?;
    println!("wrote {}", manifest.display());

    let reloaded = load_dataset(&out)?;
    assert_eq!(reloaded, dataset);

    let mut counts = [0usize; 6];
    for c in &dataset.cores {
        counts[usize::from(c.grade_group)] += 1;
    }
    println!("{} subjects, {} cores", dataset.subjects.len(), dataset.cores.len());
    for (gg, n) in counts.iter().enumerate() {
        println!("  GG{gg}: {n}");
    }
    let cancer: Vec<f64> = dataset.cores.iter().filter(|c| c.grade_group > 0).map(|c| c.involvement).collect();
    if !cancer.is_empty() {
        println!("mean involvement of cancer cores: {:.3}", cancer.iter().sum::<f64>() / cancer.len() as f64);
    }
    let benign = dataset.cores.iter().filter(|c| c.labels().category == Category::Benign).count();
    println!("benign fraction: {:.2}", benign as f64 / dataset.cores.len() as f64);
    Ok(())
}

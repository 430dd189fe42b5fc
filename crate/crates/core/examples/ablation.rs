//! Marker-set × head-mode ablation grid, each cell cross-validated on the same folds.
//!
//! cargo run --release --example ablation

use pnf::data::Marker;
use pnf::model::HeadMode;
use pnf::synth::{generate_dataset, GenConfig};
use pnf::trainer::{ablation_grid, run_ablation, CvOptions, TrainConfig};

fn main() -> pnf::Result<()> {
    let (dataset, _) = generate_dataset(&GenConfig {
        n_subjects: 30,
        cores_per_subject: 6,
        texture_contrast: 0.5,
        metadata_signal: 1.0,
        seed: 2,
        ..GenConfig::default()
    })?;
    let base = TrainConfig {
        learning_rate: 1e-3,
        epochs: 3,
        ..TrainConfig::default()
    };
    let grid = ablation_grid(
        &base,
        &[vec![], vec![Marker::Age], vec![Marker::Psa], vec![Marker::Age, Marker::Psa]],
        &[HeadMode::Both, HeadMode::MaskOnly, HeadMode::ClassOnly],
    );
    let table = run_ablation(&dataset, 3, &grid, &CvOptions::default())?;
    println!("{:<11} {:<8} {:>16} {:>16}", "head", "markers", "PCa AUROC", "csPCa AUROC");
    let fmt = |m: Option<&pnf::trainer::MeanStd>| m.map_or("-".to_string(), |m| format!("{:.3}±{:.3}", m.mean, m.std));
    for r in &table.rows {
        let flag = if r.cspca_fallback || r.pca_fallback { " (fallback)" } else { "" };
        println!(
            "{:<11} {:<8} {:>16} {:>16}{flag}",
            r.head_mode.name(),
            r.markers,
            fmt(r.aggregate.get("pca_auroc")),
            fmt(r.aggregate.get("cspca_auroc"))
        );
    }
    Ok(())
}

//! Trains briefly, evaluates on a held-out synthetic set and writes the report and figures.
//!
//! cargo run --release --example evaluate_figures -- [out_dir]

use std::path::PathBuf;

use pnf::metrics::{emit_figures, evaluate_run, EvalOptions, Task};
use pnf::model::Backbone;
use pnf::riskscore::fit_bins;
use pnf::synth::{generate_dataset, GenConfig};
use pnf::trainer::{predict, predict_heatmaps, train_cores, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args()
        .nth(1)
        .map_or_else(|| std::env::temp_dir().join("pnf-eval-example"), PathBuf::from);
    let gen = GenConfig {
        n_subjects: 30,
        cores_per_subject: 8,
        seed: 5,
        ..GenConfig::default()
    };
    let (train, _) = generate_dataset(&gen)?;
    let (test, _) = generate_dataset(&GenConfig { seed: 6, ..gen })?;

    let cfg = TrainConfig {
        learning_rate: 1e-3,
        epochs: 8,
        ..TrainConfig::default()
    };
    let all_train: Vec<usize> = (0..train.cores.len()).collect();
    let trained = train_cores(&train, &all_train, &cfg)?;
    let model = Backbone::bind(cfg.model.clone(), &trained.params)?;

    // Bins come from the training cores' own predictions and reference scores here;
    // the CLI fits them on out-of-fold predictions instead.
    let fit_preds = predict(&model, &trained.params, &trained.marker_stats, &train, &all_train)?;
    let risk: Vec<f64> = fit_preds.iter().filter_map(|p| p.risk).collect();
    let reference: Vec<u8> = train.cores.iter().filter_map(|c| c.risk_score_reference).collect();
    let bins = fit_bins(&risk, &reference)?;

    let all_test: Vec<usize> = (0..test.cores.len()).collect();
    let preds = predict(&model, &trained.params, &trained.marker_stats, &test, &all_test)?;
    let report = evaluate_run(&preds, &test.cores, Some(&bins), &EvalOptions::default())?;
    for task in [Task::PcaVsRest, Task::CspcaVsRest] {
        let t = report.task(task).expect("both tasks are reported");
        println!("{task:?} via {:?}: AUROC {:?}", t.score_source, t.auroc);
    }
    for b in &report.stratification.buckets {
        println!(
            "involvement ({:.1}, {:.1}]: {} cores, AUROC {:?}, activation {:?}",
            b.lower, b.upper, b.n_cores, b.auroc, b.mean_activation
        );
    }

    let heatmaps = predict_heatmaps(&model, &trained.params, &trained.marker_stats, &test, &all_test[..4])?;
    let files = emit_figures(&report, &heatmaps, &test.cores, &out)?;
    std::fs::write(out.join("eval_report.json"), serde_json::to_string_pretty(&report)?)?;
    println!("{} overlays, checkerboard at {}", files.overlays.len(), files.checkerboard_png.display());
    Ok(())
}

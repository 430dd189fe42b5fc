//! Subject-wise k-fold cross-validation of the toy backbone.
//!
//! cargo run --release --example train_crossval -- [epochs] [run_dir]

use std::path::PathBuf;

use pnf::synth::{generate_dataset, GenConfig};
use pnf::trainer::{cross_validate, CvOptions, TrainConfig};

fn main() -> pnf::Result<()> {
    let mut args = std::env::args().skip(1);
    let epochs = args.next().map_or(5, |s| s.parse().expect("epochs"));
    let run_dir = args.next().map(PathBuf::from);

    let (dataset, _) = generate_dataset(&GenConfig {
        n_subjects: 40,
        cores_per_subject: 8,
        seed: 3,
        ..GenConfig::default()
    })?;
    let cfg = TrainConfig {
        learning_rate: 1e-3,
        epochs,
        ..TrainConfig::default()
    };
    let opts = CvOptions {
        workers: 0,
        run_dir,
        fold_seed: None,
    };
    let cv = cross_validate(&dataset, 5, &cfg, &opts)?;
    for f in &cv.folds {
        let last = f.record.epochs.last().map_or(f64::NAN, |e| e.total);
        println!("fold {}: final loss {last:.4} {:?}", f.fold, f.metrics);
    }
    for (name, m) in &cv.aggregate {
        println!("{name:>16}: {:.3} ± {:.3} (n = {})", m.mean, m.std, m.n);
    }
    Ok(())
}

//! Command-line driver: `synth`, `train`, `crossval`, `calibrate`, `eval`, `ablate` and `replay`.
//!
//! Every artifact-producing command writes a [`RunManifest`] before starting work and
//! rewrites it with the wall-clock time when done. `pnf replay <manifest>` re-executes the
//! recorded invocation.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::data::{load_dataset, make_folds, resolve_manifest, Marker};
use crate::error::{Error, Result};
use crate::metrics::{
    emit_figures, evaluate_run, read_predictions, threshold_at_specificity, write_predictions, EvalOptions,
};
use crate::model::{load_checkpoint, Backbone, HeadMode};
use crate::riskscore::{fit_bins, RiskBins};
use crate::synth::{synthesize, GenConfig};
use crate::trainer::{
    ablation_grid, cross_validate, predict, predict_heatmaps, run_ablation, train_cores, train_fold, CvOptions,
    TrainConfig, CHECKPOINT_FILE,
};

/// Environment variable overriding the default run root (`runs`).
pub const RUNS_DIR_ENV: &str = "PNF_RUNS_DIR";
pub const MANIFEST_NAME: &str = "run_manifest.json";

#[derive(Parser, Debug)]
#[command(name = "pnf", version, about = "Prompt-conditioned ultrasound heatmap and risk pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset.
    Synth(SynthArgs),
    /// Train one fold (or all data) and save the checkpoint.
    Train(TrainArgs),
    /// k-fold cross-validation with out-of-fold predictions.
    Crossval(CrossvalArgs),
    /// Fit histogram-matched risk bins.
    Calibrate(CalibrateArgs),
    /// Evaluate a checkpoint on a dataset and emit figures.
    Eval(EvalArgs),
    /// Cross-validate a grid of marker sets and head modes.
    Ablate(AblateArgs),
    /// Re-run the invocation recorded in a run manifest.
    Replay(ReplayArgs),
}

#[derive(Args, Debug)]
struct Common {
    /// JSON or TOML configuration, or a run manifest whose configuration is reused.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ModelFlags {
    /// Prompt markers, e.g. `age,psa` or `none`.
    #[arg(long)]
    markers: Option<String>,
    #[arg(long = "head-mode")]
    head_mode: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long = "batch-size")]
    batch_size: Option<usize>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    subjects: Option<usize>,
    #[arg(long = "cores-per-subject")]
    cores_per_subject: Option<usize>,
    #[arg(long)]
    prevalence: Option<f64>,
    #[arg(long)]
    contrast: Option<f64>,
    #[arg(long = "metadata-signal")]
    metadata_signal: Option<f64>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    model: ModelFlags,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    /// Validation fold index, or `all` to train on every core.
    #[arg(long, default_value = "0")]
    fold: String,
    #[arg(long)]
    name: Option<String>,
}

#[derive(Args, Debug)]
struct CrossvalArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    model: ModelFlags,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[arg(long)]
    name: Option<String>,
}

#[derive(Args, Debug)]
struct CalibrateArgs {
    #[command(flatten)]
    common: Common,
    /// Out-of-fold predictions CSV (`crossval` output).
    #[arg(long)]
    predictions: PathBuf,
    /// CSV with a `reference_score` column, or a dataset directory.
    #[arg(long)]
    reference: PathBuf,
    /// Dataset with the predicted cores' labels; enables the operating threshold.
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long = "target-specificity", default_value_t = 0.7)]
    target_specificity: f64,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    bins: Option<PathBuf>,
    /// Number of cores that get an overlay figure.
    #[arg(long, default_value_t = 8)]
    figures: usize,
    #[arg(long)]
    name: Option<String>,
}

#[derive(Args, Debug)]
struct AblateArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    model: ModelFlags,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Marker sets separated by `;`, e.g. `none;age;psa;age,psa`.
    #[arg(long = "marker-sets", default_value = "none;age,psa")]
    marker_sets: String,
    /// Head modes separated by `,`.
    #[arg(long = "head-modes", default_value = "both,mask_only,class_only")]
    head_modes: String,
    #[arg(long)]
    name: Option<String>,
}

#[derive(Args, Debug)]
struct ReplayArgs {
    manifest: PathBuf,
    /// Write artifacts here instead of the recorded location.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Options of the `train` command's fold selection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FoldChoice {
    Index(usize),
    All,
}

/// A fully resolved command: everything needed to reproduce its artifacts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum Invocation {
    Synth {
        config: GenConfig,
        out: PathBuf,
    },
    Train {
        config: TrainConfig,
        dataset: PathBuf,
        folds: usize,
        fold: FoldChoice,
        out: PathBuf,
    },
    Crossval {
        config: TrainConfig,
        dataset: PathBuf,
        folds: usize,
        workers: usize,
        out: PathBuf,
    },
    Calibrate {
        predictions: PathBuf,
        reference: PathBuf,
        dataset: Option<PathBuf>,
        target_specificity: f64,
        out: PathBuf,
    },
    Eval {
        checkpoint: PathBuf,
        dataset: PathBuf,
        bins: Option<PathBuf>,
        options: EvalOptions,
        figures: usize,
        out: PathBuf,
    },
    Ablate {
        config: TrainConfig,
        dataset: PathBuf,
        folds: usize,
        workers: usize,
        marker_sets: Vec<Vec<Marker>>,
        head_modes: Vec<HeadMode>,
        out: PathBuf,
    },
}

impl Invocation {
    pub fn name(&self) -> &'static str {
        match self {
            Invocation::Synth { .. } => "synth",
            Invocation::Train { .. } => "train",
            Invocation::Crossval { .. } => "crossval",
            Invocation::Calibrate { .. } => "calibrate",
            Invocation::Eval { .. } => "eval",
            Invocation::Ablate { .. } => "ablate",
        }
    }

    pub fn out(&self) -> &Path {
        match self {
            Invocation::Synth { out, .. }
            | Invocation::Train { out, .. }
            | Invocation::Crossval { out, .. }
            | Invocation::Calibrate { out, .. }
            | Invocation::Eval { out, .. }
            | Invocation::Ablate { out, .. } => out,
        }
    }

    fn set_out(&mut self, new: PathBuf) {
        match self {
            Invocation::Synth { out, .. }
            | Invocation::Train { out, .. }
            | Invocation::Crossval { out, .. }
            | Invocation::Calibrate { out, .. }
            | Invocation::Eval { out, .. }
            | Invocation::Ablate { out, .. } => *out = new,
        }
    }

    fn seed(&self) -> Option<u64> {
        match self {
            Invocation::Synth { config, .. } => Some(config.seed),
            Invocation::Train { config, .. } | Invocation::Crossval { config, .. } | Invocation::Ablate { config, .. } => {
                Some(config.seed)
            }
            _ => None,
        }
    }

    /// Where the manifest goes: inside the output directory, or beside an output file.
    pub fn manifest_path(&self) -> PathBuf {
        match self {
            Invocation::Calibrate { out, .. } => {
                let mut name = out.file_name().map(OsString::from).unwrap_or_default();
                name.push(".manifest.json");
                out.with_file_name(name)
            }
            other => other.out().join(MANIFEST_NAME),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub seed: Option<u64>,
    pub started_unix_secs: u64,
    /// `None` until the command finishes.
    pub wall_clock_secs: Option<f64>,
    pub outputs: Vec<PathBuf>,
    #[serde(flatten)]
    pub invocation: Invocation,
}

impl RunManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    fn write(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }
}

/// Usage and validation problems exit with 2, failures during execution with 1.
#[derive(Debug)]
enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

fn usage(e: impl std::fmt::Display) -> Failure {
    Failure::Usage(e.to_string())
}

fn runs_root() -> PathBuf {
    std::env::var_os(RUNS_DIR_ENV).map_or_else(|| PathBuf::from("runs"), PathBuf::from)
}

fn default_out(out: Option<PathBuf>, name: Option<String>, fallback: String) -> PathBuf {
    out.unwrap_or_else(|| runs_root().join(name.unwrap_or(fallback)))
}

fn require_exists(path: &Path, what: &str) -> std::result::Result<(), Failure> {
    if path.exists() {
        Ok(())
    } else {
        Err(usage(format!("{what} `{}` does not exist", path.display())))
    }
}

/// File layer of the configuration: a section of a JSON/TOML file, or the matching section of
/// a run manifest.
fn config_layer<T: serde::de::DeserializeOwned>(path: &Path, section: &str) -> std::result::Result<Option<T>, Failure> {
    require_exists(path, "config file")?;
    let text = std::fs::read_to_string(path).map_err(|e| usage(Error::io(path, e)))?;
    let value: serde_json::Value = if path.extension().is_some_and(|e| e == "toml") {
        let t: toml::Value = toml::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        serde_json::to_value(t).map_err(usage)?
    } else {
        serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?
    };
    let from_manifest = value.get("tool_version").is_some() && value.get("command").is_some();
    let key = if from_manifest { "config" } else { section };
    match value.get(key) {
        Some(v) => serde_json::from_value(v.clone())
            .map(Some)
            .map_err(|e| usage(format!("{}: `{key}`: {e}", path.display()))),
        None => Ok(None),
    }
}

fn resolve_train(common: &Common, flags: &ModelFlags) -> std::result::Result<TrainConfig, Failure> {
    let mut cfg = match &common.config {
        Some(p) => config_layer::<TrainConfig>(p, "train")?.unwrap_or_default(),
        None => TrainConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(m) = &flags.markers {
        cfg.model.prompt_markers = Marker::parse_list(m).map_err(usage)?;
    }
    if let Some(h) = &flags.head_mode {
        cfg.model.head_mode = HeadMode::parse(h).map_err(usage)?;
    }
    if let Some(e) = flags.epochs {
        cfg.epochs = e;
    }
    if let Some(lr) = flags.lr {
        cfg.learning_rate = lr;
    }
    if let Some(b) = flags.batch_size {
        cfg.batch_size = b;
    }
    cfg.validate().map_err(usage)?;
    Ok(cfg)
}

fn resolve(command: Command) -> std::result::Result<Invocation, Failure> {
    Ok(match command {
        Command::Synth(a) => {
            let mut cfg = match &a.common.config {
                Some(p) => config_layer::<GenConfig>(p, "synth")?.unwrap_or_default(),
                None => GenConfig::default(),
            };
            if let Some(s) = a.common.seed {
                cfg.seed = s;
            }
            if let Some(v) = a.subjects {
                cfg.n_subjects = v;
            }
            if let Some(v) = a.cores_per_subject {
                cfg.cores_per_subject = v;
            }
            if let Some(v) = a.prevalence {
                cfg.lesion_prevalence = v;
            }
            if let Some(v) = a.contrast {
                cfg.texture_contrast = v;
            }
            if let Some(v) = a.metadata_signal {
                cfg.metadata_signal = v;
            }
            cfg.validate().map_err(usage)?;
            let out = a.common.out.ok_or_else(|| usage("synth requires --out"))?;
            Invocation::Synth { config: cfg, out }
        }
        Command::Train(a) => {
            let config = resolve_train(&a.common, &a.model)?;
            require_exists(&a.dataset, "dataset")?;
            let fold = if a.fold == "all" {
                FoldChoice::All
            } else {
                let i: usize = a.fold.parse().map_err(|_| usage(format!("--fold `{}` is not an index or `all`", a.fold)))?;
                if i >= a.folds {
                    return Err(usage(format!("--fold {i} must be below --folds {}", a.folds)));
                }
                FoldChoice::Index(i)
            };
            if a.folds < 2 {
                return Err(usage("--folds must be at least 2"));
            }
            let out = default_out(a.common.out, a.name, format!("train-seed{}", config.seed));
            Invocation::Train {
                config,
                dataset: a.dataset,
                folds: a.folds,
                fold,
                out,
            }
        }
        Command::Crossval(a) => {
            let config = resolve_train(&a.common, &a.model)?;
            require_exists(&a.dataset, "dataset")?;
            if a.folds < 2 {
                return Err(usage("--folds must be at least 2"));
            }
            let out = default_out(a.common.out, a.name, format!("crossval-seed{}", config.seed));
            Invocation::Crossval {
                config,
                dataset: a.dataset,
                folds: a.folds,
                workers: a.workers,
                out,
            }
        }
        Command::Calibrate(a) => {
            require_exists(&a.predictions, "predictions")?;
            require_exists(&a.reference, "reference")?;
            if let Some(d) = &a.dataset {
                require_exists(d, "dataset")?;
            }
            if !(0.0..=1.0).contains(&a.target_specificity) {
                return Err(usage("--target-specificity must lie in [0, 1]"));
            }
            let out = a.common.out.ok_or_else(|| usage("calibrate requires --out (bins JSON path)"))?;
            Invocation::Calibrate {
                predictions: a.predictions,
                reference: a.reference,
                dataset: a.dataset,
                target_specificity: a.target_specificity,
                out,
            }
        }
        Command::Eval(a) => {
            require_exists(&a.checkpoint, "checkpoint")?;
            require_exists(&a.dataset, "dataset")?;
            let ckpt = load_checkpoint(&a.checkpoint).map_err(usage)?;
            match &a.bins {
                None if ckpt.config.head_mode.has_risk() => {
                    return Err(usage(format!(
                        "--bins is required: checkpoint head mode `{}` produces risk scores",
                        ckpt.config.head_mode.name()
                    )))
                }
                Some(b) => require_exists(b, "bins")?,
                None => {}
            }
            let options = match &a.common.config {
                Some(p) => config_layer::<EvalOptions>(p, "eval")?.unwrap_or_default(),
                None => EvalOptions::default(),
            };
            let out = default_out(a.common.out, a.name, "eval".into());
            Invocation::Eval {
                checkpoint: a.checkpoint,
                dataset: a.dataset,
                bins: a.bins,
                options,
                figures: a.figures,
                out,
            }
        }
        Command::Ablate(a) => {
            let config = resolve_train(&a.common, &a.model)?;
            require_exists(&a.dataset, "dataset")?;
            if a.folds < 2 {
                return Err(usage("--folds must be at least 2"));
            }
            let marker_sets = a
                .marker_sets
                .split(';')
                .map(|s| Marker::parse_list(s.trim()))
                .collect::<Result<Vec<_>>>()
                .map_err(usage)?;
            let head_modes = a
                .head_modes
                .split(',')
                .map(|s| HeadMode::parse(s.trim()))
                .collect::<Result<Vec<_>>>()
                .map_err(usage)?;
            if marker_sets.is_empty() || head_modes.is_empty() {
                return Err(usage("ablation grid is empty"));
            }
            let out = default_out(a.common.out, a.name, format!("ablate-seed{}", config.seed));
            Invocation::Ablate {
                config,
                dataset: a.dataset,
                folds: a.folds,
                workers: a.workers,
                marker_sets,
                head_modes,
                out,
            }
        }
        Command::Replay(a) => {
            require_exists(&a.manifest, "manifest")?;
            let mut m = RunManifest::load(&a.manifest).map_err(usage)?;
            if let Some(out) = a.out {
                m.invocation.set_out(out);
            }
            m.invocation
        }
    })
}

fn read_reference_scores(path: &Path) -> Result<Vec<u8>> {
    let csv_path = if path.is_dir() { resolve_manifest(path) } else { path.to_path_buf() };
    let mut r = csv::Reader::from_path(&csv_path)?;
    let col = r
        .headers()?
        .iter()
        .position(|h| h == "reference_score")
        .ok_or_else(|| Error::invalid(format!("{} has no reference_score column", csv_path.display())))?;
    let mut scores = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let v = rec.get(col).unwrap_or("").trim();
        if v.is_empty() {
            continue;
        }
        let s: u8 = v
            .parse()
            .map_err(|_| Error::invalid(format!("{} row {}: reference_score `{v}`", csv_path.display(), i + 1)))?;
        scores.push(s);
    }
    Ok(scores)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Executes a resolved invocation and returns the artifacts it wrote.
pub fn execute(inv: &Invocation) -> Result<Vec<PathBuf>> {
    match inv {
        Invocation::Synth { config, out } => {
            let (_, manifest) = synthesize(config, out)?;
            Ok(vec![manifest, out.join("ground_truth")])
        }
        Invocation::Train {
            config,
            dataset,
            folds,
            fold,
            out,
        } => {
            let data = load_dataset(dataset)?;
            create_dir(out)?;
            match fold {
                FoldChoice::Index(i) => {
                    let assignment = make_folds(&data.subject_ids(), *folds, config.seed)?;
                    let run = train_fold(&data, &assignment, *i, config, Some(out))?;
                    let preds = out.join(format!("fold{i}")).join("validation_predictions.csv");
                    write_predictions(&preds, &run.predictions)?;
                    Ok(vec![out.join(format!("fold{i}")), preds])
                }
                FoldChoice::All => {
                    let all: Vec<usize> = (0..data.cores.len()).collect();
                    let trained = train_cores(&data, &all, config)?;
                    let dir = out.join("full");
                    create_dir(&dir)?;
                    let ckpt = dir.join(CHECKPOINT_FILE);
                    crate::model::save_checkpoint(
                        &ckpt,
                        &crate::model::Checkpoint {
                            config: config.model.clone(),
                            params: trained.params,
                            marker_stats: trained.marker_stats,
                            metadata: serde_json::json!({ "fold": "all", "epochs": config.epochs, "seed": config.seed }),
                        },
                    )?;
                    let log = dir.join(crate::trainer::EPOCH_LOG_FILE);
                    let mut w = csv::Writer::from_path(&log)?;
                    for e in &trained.epochs {
                        w.serialize(e)?;
                    }
                    w.flush().map_err(|e| Error::io(&log, e))?;
                    write_json(&dir.join(crate::trainer::CONFIG_FILE), config)?;
                    Ok(vec![dir])
                }
            }
        }
        Invocation::Crossval {
            config,
            dataset,
            folds,
            workers,
            out,
        } => {
            let data = load_dataset(dataset)?;
            let opts = CvOptions {
                workers: *workers,
                run_dir: Some(out.clone()),
                fold_seed: None,
            };
            cross_validate(&data, *folds, config, &opts)?;
            Ok(vec![
                out.join(crate::trainer::CV_SUMMARY_FILE),
                out.join(crate::trainer::OOF_PREDICTIONS_FILE),
            ])
        }
        Invocation::Calibrate {
            predictions,
            reference,
            dataset,
            target_specificity,
            out,
        } => {
            let preds = read_predictions(predictions)?;
            let (scores, source): (Vec<f64>, &str) = if preds.iter().all(|p| p.risk.is_some()) {
                (preds.iter().map(|p| p.risk.unwrap()).collect(), "risk_probability")
            } else if preds.iter().all(|p| p.pca_score.is_some()) {
                (preds.iter().map(|p| p.pca_score.unwrap()).collect(), "heatmap_mean")
            } else {
                return Err(Error::config("predictions lack a complete risk or heatmap column"));
            };
            let refs = read_reference_scores(reference)?;
            let mut bins = fit_bins(&scores, &refs)?;
            bins.provenance.source = format!(
                "{source} from {}; reference {}",
                predictions.display(),
                reference.display()
            );
            if let Some(d) = dataset {
                let data = load_dataset(d)?;
                let gg: BTreeMap<&str, u8> = data.cores.iter().map(|c| (c.core_id.as_str(), c.grade_group)).collect();
                let labels = preds
                    .iter()
                    .map(|p| {
                        gg.get(p.core_id.as_str())
                            .map(|&g| g >= 3)
                            .ok_or_else(|| Error::invalid(format!("core {} not in dataset", p.core_id)))
                    })
                    .collect::<Result<Vec<bool>>>()?;
                let op = threshold_at_specificity(&scores, &labels, *target_specificity)?;
                bins.provenance.operating_threshold = op.threshold;
                bins.provenance.operating_specificity = Some(*target_specificity);
            }
            if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
                create_dir(parent)?;
            }
            write_json(out, &bins)?;
            Ok(vec![out.clone()])
        }
        Invocation::Eval {
            checkpoint,
            dataset,
            bins,
            options,
            figures,
            out,
        } => {
            let ckpt = load_checkpoint(checkpoint)?;
            let model = Backbone::bind(ckpt.config.clone(), &ckpt.params)?;
            let bins: Option<RiskBins> = match bins {
                Some(p) => {
                    let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                    let b: RiskBins = serde_json::from_str(&text)?;
                    b.validate()?;
                    Some(b)
                }
                None => None,
            };
            let data = load_dataset(dataset)?;
            let all: Vec<usize> = (0..data.cores.len()).collect();
            let preds = predict(&model, &ckpt.params, &ckpt.marker_stats, &data, &all)?;
            let report = evaluate_run(&preds, &data.cores, bins.as_ref(), options)?;
            create_dir(out)?;
            let report_path = out.join("eval_report.json");
            write_json(&report_path, &report)?;
            let preds_path = out.join("predictions.csv");
            write_predictions(&preds_path, &preds)?;
            let shown: Vec<usize> = all.iter().copied().take(*figures).collect();
            let heatmaps = predict_heatmaps(&model, &ckpt.params, &ckpt.marker_stats, &data, &shown)?;
            let files = emit_figures(&report, &heatmaps, &data.cores, out.join("figures"))?;
            let mut written = vec![report_path, preds_path, files.checkerboard_png, files.checkerboard_csv];
            written.extend(files.overlays);
            Ok(written)
        }
        Invocation::Ablate {
            config,
            dataset,
            folds,
            workers,
            marker_sets,
            head_modes,
            out,
        } => {
            let data = load_dataset(dataset)?;
            let grid = ablation_grid(config, marker_sets, head_modes);
            let opts = CvOptions {
                workers: *workers,
                run_dir: Some(out.clone()),
                fold_seed: None,
            };
            run_ablation(&data, *folds, &grid, &opts)?;
            Ok(vec![out.join("ablation.csv"), out.join("ablation.json")])
        }
    }
}

/// Writes the manifest, executes, then records outputs and wall-clock time.
pub fn run_invocation(inv: &Invocation) -> Result<RunManifest> {
    let start = Instant::now();
    let mut manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        seed: inv.seed(),
        started_unix_secs: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        wall_clock_secs: None,
        outputs: Vec::new(),
        invocation: inv.clone(),
    };
    let path = inv.manifest_path();
    manifest.write(&path)?;
    manifest.outputs = execute(inv)?;
    manifest.wall_clock_secs = Some(start.elapsed().as_secs_f64());
    manifest.write(&path)?;
    Ok(manifest)
}

/// Parses `argv` (including the program name), runs the command and returns the exit code:
/// 0 on success, 2 for usage or validation errors, 1 for runtime failures. Diagnostics go to
/// stderr as a single line.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{e}");
                    0
                }
                _ => {
                    let msg = e.to_string();
                    eprintln!("error: {}", msg.lines().next().unwrap_or("").trim_start_matches("error: "));
                    2
                }
            };
        }
    };
    let outcome = resolve(cli.command).and_then(|inv| run_invocation(&inv).map_err(Failure::Runtime));
    match outcome {
        Ok(m) => {
            println!("{}: wrote {}", m.invocation.name(), m.invocation.manifest_path().display());
            0
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {}", msg.replace('\n', " "));
            2
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {}", e.to_string().replace('\n', " "));
            1
        }
    }
}

pub fn main_exit() -> i32 {
    run_command(std::env::args_os())
}

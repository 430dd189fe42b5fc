//! Optimization loop, cross-validation and the ablation runner.

mod augment;
mod crossval;
mod optim;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{
    preprocess_float_image, resize_bilinear, resize_mask_nearest, BiopsyCore, CoreLabels, Dataset, FoldAssignment,
    Image, Mask, MarkerStats,
};
use crate::error::{Error, Result};
use crate::metrics::CorePrediction;
use crate::model::{save_checkpoint, Backbone, BackboneConfig, Checkpoint, MarkerValues};
use crate::nn::{Grads, Graph, ParamSet};
use crate::objective::{breakdown, mask_weights, predicted_involvement, sample_loss_graph, LossBreakdown, LossConfig};
use crate::seeding::derive_seed;

pub use augment::{augment_translate, translate, translation_offset};
pub use crossval::{
    ablation_grid, cross_validate, fold_metrics, run_ablation, AblationRow, AblationTable, CvOptions, CvResult,
    FoldSummary, MeanStd, CV_SUMMARY_FILE, OOF_PREDICTIONS_FILE,
};
pub use optim::{lr_at, Adam, AdamConfig};

pub const CHECKPOINT_FILE: &str = "checkpoint.pnf";
pub const EPOCH_LOG_FILE: &str = "epoch_log.csv";
pub const CONFIG_FILE: &str = "config.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub weight_decay: f64,
    /// Largest translation in pixels of a 256-pixel image; scaled for other model sizes.
    pub max_translate_px: usize,
    pub seed: u64,
    /// Network shape, including head mode and prompt markers.
    pub model: BackboneConfig,
    pub loss: LossConfig,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-5,
            epochs: 35,
            batch_size: 8,
            weight_decay: 0.0,
            max_translate_px: 32,
            seed: 0,
            model: BackboneConfig::toy(),
            loss: LossConfig::default(),
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config(format!("learning_rate {} must be positive", self.learning_rate)));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::config("epochs and batch_size must be positive"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::config("weight_decay must be ≥ 0"));
        }
        if self.max_translate_px >= crate::data::IMAGE_SIZE {
            return Err(Error::config(format!(
                "max_translate_px {} must stay inside the image",
                self.max_translate_px
            )));
        }
        self.model.validate()
    }

    fn translate_px(&self) -> usize {
        (self.max_translate_px * self.model.image_size).div_ceil(crate::data::IMAGE_SIZE)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub steps: usize,
    /// Learning rate of the epoch's last step.
    pub learning_rate: f64,
    pub l_cspca: f64,
    pub l_hmap: f64,
    pub total: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub fold: Option<usize>,
    pub epochs: Vec<EpochLog>,
    pub config: TrainConfig,
    /// Not serialized, so that `config.json` is identical across replays.
    #[serde(skip)]
    pub wall_clock_secs: f64,
    /// Relative to the fold directory when written to `config.json`.
    pub checkpoint: Option<PathBuf>,
    pub train_subjects: Vec<String>,
    pub validation_subjects: Vec<String>,
}

/// A core resampled to the model's input size, with its normalized markers.
#[derive(Clone, Debug)]
pub struct TrainSample {
    pub core_id: String,
    pub image: Image,
    pub needle_mask: Mask,
    pub labels: CoreLabels,
    pub involvement: f64,
    pub markers: MarkerValues,
}

fn resample(core: &BiopsyCore, size: usize) -> Result<(Image, Mask)> {
    if core.image.dim() == (size, size) {
        return Ok((core.image.clone(), core.needle_mask.clone()));
    }
    let img = resize_bilinear(core.image.mapv(f64::from).view(), size, size)?;
    let img = preprocess_float_image(img.mapv(|v| v as f32).view())?;
    let mut mask = resize_mask_nearest(core.needle_mask.view(), size, size)?;
    if !mask.iter().any(|&m| m) {
        // keep at least the nearest pixel of a needle too thin to survive downsampling
        let (h, w) = core.needle_mask.dim();
        if let Some((idx, _)) = core.needle_mask.indexed_iter().find(|(_, &m)| m) {
            mask[[idx.0 * size / h, idx.1 * size / w]] = true;
        }
    }
    Ok((img, mask))
}

/// Resamples cores and attaches normalized marker values.
pub fn prepare_samples(
    model: &Backbone,
    dataset: &Dataset,
    indices: &[usize],
    stats: &MarkerStats,
) -> Result<Vec<TrainSample>> {
    let subjects = dataset.subject_index();
    indices
        .par_iter()
        .map(|&i| {
            let core = &dataset.cores[i];
            let subject = &dataset.subjects[*subjects
                .get(core.subject_id.as_str())
                .ok_or_else(|| Error::invalid(format!("core {} has no subject", core.core_id)))?];
            let (image, needle_mask) = resample(core, model.config().image_size)?;
            Ok(TrainSample {
                core_id: core.core_id.clone(),
                image,
                needle_mask,
                labels: core.labels(),
                involvement: core.involvement,
                markers: model.marker_values(subject, stats)?,
            })
        })
        .collect()
}

/// Loss of one sample and its parameter gradients.
pub fn sample_gradients(
    model: &Backbone,
    params: &ParamSet,
    trainable: &[bool],
    image: &Image,
    needle_mask: &Mask,
    labels: CoreLabels,
    involvement: f64,
    markers: &MarkerValues,
    loss: &LossConfig,
) -> Result<(LossBreakdown, Grads)> {
    let mut g = Graph::with_grad(params, trainable);
    let out = model.forward_graph(&mut g, image, markers)?;
    let weights: Arc<Array2<f64>> = mask_weights(needle_mask);
    let (total, lc, lh) = sample_loss_graph(&mut g, &out, labels, weights, involvement, loss);
    let total = total.ok_or_else(|| Error::config("model has no output head"))?;
    Ok((breakdown(lc, lh), g.backward(total)))
}

/// Mean loss and mean gradients over a batch. Samples run in parallel; gradients are summed
/// in batch order so the result does not depend on scheduling.
pub fn batch_gradients(
    model: &Backbone,
    params: &ParamSet,
    trainable: &[bool],
    batch: &[(Image, Mask, CoreLabels, f64, &MarkerValues)],
    loss: &LossConfig,
) -> Result<(LossBreakdown, Grads)> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let per: Vec<(LossBreakdown, Grads)> = batch
        .par_iter()
        .map(|(img, mask, labels, inv, markers)| {
            sample_gradients(model, params, trainable, img, mask, *labels, *inv, markers, loss)
        })
        .collect::<Result<_>>()?;
    let n = batch.len() as f64;
    let mut grads: Grads = vec![None; params.len()];
    let (mut lc, mut lh) = (0.0, 0.0);
    for (b, gs) in per {
        lc += b.l_cspca;
        lh += b.l_hmap;
        for (acc, g) in grads.iter_mut().zip(gs) {
            if let Some(g) = g {
                match acc {
                    Some(a) => *a += &g,
                    None => *acc = Some(g),
                }
            }
        }
    }
    for g in grads.iter_mut().flatten() {
        g.mapv_inplace(|v| v / n);
    }
    Ok((breakdown(lc / n, lh / n), grads))
}

/// Result of training on a set of cores.
#[derive(Clone, Debug)]
pub struct Trained {
    pub params: ParamSet,
    pub marker_stats: MarkerStats,
    pub epochs: Vec<EpochLog>,
}

/// Trains a fresh model on `train` (dataset core indices) with the configured recipe.
pub fn train_cores(dataset: &Dataset, train: &[usize], cfg: &TrainConfig) -> Result<Trained> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::invalid("no training cores"));
    }
    let mut train_subjects: Vec<&str> = train.iter().map(|&i| dataset.cores[i].subject_id.as_str()).collect();
    train_subjects.sort_unstable();
    train_subjects.dedup();
    let stats = MarkerStats::fit(
        train_subjects.iter().filter_map(|s| dataset.subject(s)),
        &cfg.model.prompt_markers,
    )?;
    let (model, mut params) = Backbone::new(cfg.model.clone(), derive_seed(cfg.seed, "init"))?;
    let trainable = model.trainable_mask(&params);
    let samples = prepare_samples(&model, dataset, train, &stats)?;
    let steps_per_epoch = samples.len().div_ceil(cfg.batch_size);
    let total_steps = steps_per_epoch * cfg.epochs;
    let shift = cfg.translate_px();
    let mut opt = Adam::new(cfg.adam, params.len());
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        order.sort_unstable();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &format!("shuffle/{epoch}"))));
        let (mut lc, mut lh, mut lr) = (0.0, 0.0, 0.0);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<_> = chunk
                .par_iter()
                .map(|&i| {
                    let s = &samples[i];
                    let seed = derive_seed(cfg.seed, &format!("augment/{epoch}/{}", s.core_id));
                    let (img, mask) = augment_translate(&s.image, &s.needle_mask, shift, seed);
                    (img, mask, s.labels, s.involvement, &s.markers)
                })
                .collect();
            let (b, grads) = batch_gradients(&model, &params, &trainable, &batch, &cfg.loss)?;
            if !b.total.is_finite() {
                return Err(Error::Divergence(format!(
                    "non-finite loss at epoch {epoch}, step {step}: l_cspca = {}, l_hmap = {}",
                    b.l_cspca, b.l_hmap
                )));
            }
            lr = lr_at(step, total_steps, cfg.learning_rate)?;
            opt.step(&mut params, &grads, lr, cfg.weight_decay);
            step += 1;
            let w = chunk.len() as f64;
            lc += b.l_cspca * w;
            lh += b.l_hmap * w;
        }
        let n = samples.len() as f64;
        let b = breakdown(lc / n, lh / n);
        epochs.push(EpochLog {
            epoch,
            steps: step,
            learning_rate: lr,
            l_cspca: b.l_cspca,
            l_hmap: b.l_hmap,
            total: b.total,
        });
    }
    Ok(Trained {
        params,
        marker_stats: stats,
        epochs,
    })
}

/// Runs the model over dataset cores (in the given order) and reduces each output to its
/// needle-mean heatmap score and risk probability.
pub fn predict(
    model: &Backbone,
    params: &ParamSet,
    stats: &MarkerStats,
    dataset: &Dataset,
    indices: &[usize],
) -> Result<Vec<CorePrediction>> {
    let samples = prepare_samples(model, dataset, indices, stats)?;
    samples
        .par_iter()
        .zip(indices)
        .map(|(s, &i)| {
            let out = model.forward(params, &s.image, &s.markers)?;
            let pca_score = match &out.heatmap {
                Some(h) => Some(predicted_involvement(h.view(), s.needle_mask.view())?),
                None => None,
            };
            Ok(CorePrediction {
                core_id: s.core_id.clone(),
                subject_id: dataset.cores[i].subject_id.clone(),
                pca_score,
                risk: out.risk,
            })
        })
        .collect()
}

/// Full-resolution heatmaps for the given cores (resized back to the core's image size).
pub fn predict_heatmaps(
    model: &Backbone,
    params: &ParamSet,
    stats: &MarkerStats,
    dataset: &Dataset,
    indices: &[usize],
) -> Result<BTreeMap<String, Array2<f64>>> {
    let samples = prepare_samples(model, dataset, indices, stats)?;
    samples
        .par_iter()
        .zip(indices)
        .filter_map(|(s, &i)| {
            let out = match model.forward(params, &s.image, &s.markers) {
                Ok(o) => o,
                Err(e) => return Some(Err(e)),
            };
            let h = out.heatmap?;
            let (rows, cols) = dataset.cores[i].image.dim();
            let full = if h.dim() == (rows, cols) {
                Ok(h)
            } else {
                resize_bilinear(h.view(), rows, cols)
            };
            Some(full.map(|f| (s.core_id.clone(), f)))
        })
        .collect()
}

/// Output of one cross-validation fold.
#[derive(Clone, Debug)]
pub struct FoldRun {
    pub record: RunRecord,
    pub params: ParamSet,
    pub marker_stats: MarkerStats,
    /// Validation predictions in dataset order.
    pub predictions: Vec<CorePrediction>,
}

fn write_epoch_log(path: &Path, epochs: &[EpochLog]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for e in epochs {
        w.serialize(e)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_epoch_log(path: impl AsRef<Path>) -> Result<Vec<EpochLog>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Trains on every fold but `fold`, predicts `fold`, and persists
/// `<run_dir>/fold<i>/{checkpoint.pnf, epoch_log.csv, config.json}` when `run_dir` is given.
///
/// Panics if a validation subject also appears in training.
pub fn train_fold(
    dataset: &Dataset,
    folds: &FoldAssignment,
    fold: usize,
    cfg: &TrainConfig,
    run_dir: Option<&Path>,
) -> Result<FoldRun> {
    let start = Instant::now();
    let split = folds.split(dataset, fold)?;
    let trained = train_cores(dataset, &split.train, cfg)?;
    let model = Backbone::bind(cfg.model.clone(), &trained.params)?;
    let predictions = predict(&model, &trained.params, &trained.marker_stats, dataset, &split.validation)?;
    let subjects_of = |idx: &[usize]| {
        let mut s: Vec<String> = idx.iter().map(|&i| dataset.cores[i].subject_id.clone()).collect();
        s.sort();
        s.dedup();
        s
    };
    let mut record = RunRecord {
        fold: Some(fold),
        epochs: trained.epochs,
        config: cfg.clone(),
        wall_clock_secs: 0.0,
        checkpoint: None,
        train_subjects: subjects_of(&split.train),
        validation_subjects: subjects_of(&split.validation),
    };
    if let Some(dir) = run_dir {
        let dir = dir.join(format!("fold{fold}"));
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let ckpt = dir.join(CHECKPOINT_FILE);
        save_checkpoint(
            &ckpt,
            &Checkpoint {
                config: cfg.model.clone(),
                params: trained.params.clone(),
                marker_stats: trained.marker_stats.clone(),
                metadata: serde_json::json!({
                    "fold": fold,
                    "epochs": cfg.epochs,
                    "seed": cfg.seed,
                    "final_loss": record.epochs.last().map(|e| e.total),
                }),
            },
        )?;
        write_epoch_log(&dir.join(EPOCH_LOG_FILE), &record.epochs)?;
        record.checkpoint = Some(PathBuf::from(CHECKPOINT_FILE));
        let cfg_path = dir.join(CONFIG_FILE);
        std::fs::write(&cfg_path, serde_json::to_string_pretty(&record)?).map_err(|e| Error::io(&cfg_path, e))?;
        record.checkpoint = Some(ckpt);
    }
    record.wall_clock_secs = start.elapsed().as_secs_f64();
    Ok(FoldRun {
        record,
        params: trained.params,
        marker_stats: trained.marker_stats,
        predictions,
    })
}

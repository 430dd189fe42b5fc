//! Synthetic micro-ultrasound-like biopsy data with known lesions, involvement and
//! marker-label coupling.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{mask_to_png, preprocess_image, save_dataset, BiopsyCore, Dataset, Image, Mask, Subject, IMAGE_SIZE};
use crate::error::{Error, Result};
use crate::seeding::derive_seed;

/// Mean of the background log-intensity field.
pub const LOG_MEAN: f64 = -2.0;
/// Standard deviation of the background log-intensity field.
pub const LOG_STD: f64 = 0.5;
const KERNEL: [f64; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub n_subjects: usize,
    pub cores_per_subject: usize,
    /// Marginal probability that a core is cancerous.
    pub lesion_prevalence: f64,
    /// Lesion mean log-intensity shift in units of the background standard deviation.
    pub texture_contrast: f64,
    /// Coupling of PSA (and weakly age) to the subject's cancer burden, in `[0, 1]`.
    pub metadata_signal: f64,
    pub seed: u64,
    /// Correlation of a core's cancer latent with its subject's burden.
    pub subject_correlation: f64,
    /// Lesion contrast is scaled by `1 + gain * (involvement - 0.5)`.
    pub involvement_contrast_gain: f64,
    /// Emit a PRI-MUS-like 1–5 reference score per core.
    pub reference_scores: bool,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            n_subjects: 100,
            cores_per_subject: 8,
            lesion_prevalence: 0.3,
            texture_contrast: 2.0,
            metadata_signal: 0.5,
            seed: 0,
            subject_correlation: 0.7,
            involvement_contrast_gain: 0.0,
            reference_scores: true,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_subjects == 0 || self.cores_per_subject == 0 {
            return Err(Error::invalid("n_subjects and cores_per_subject must be positive"));
        }
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::invalid(format!("{name} {v} outside [0, 1]")))
            }
        };
        unit("lesion_prevalence", self.lesion_prevalence)?;
        unit("metadata_signal", self.metadata_signal)?;
        unit("subject_correlation", self.subject_correlation)?;
        if !(self.texture_contrast >= 0.0 && self.texture_contrast.is_finite()) {
            return Err(Error::invalid(format!("texture_contrast {} must be ≥ 0", self.texture_contrast)));
        }
        if !self.involvement_contrast_gain.is_finite() {
            return Err(Error::invalid("involvement_contrast_gain must be finite"));
        }
        Ok(())
    }
}

/// Straight needle band; `angle` is measured from the image's vertical axis (radians).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeedleSpec {
    /// `(row, col)` of the axis start.
    pub top: (f64, f64),
    pub angle: f64,
    pub length: f64,
    pub width: f64,
}

/// Elliptic lesion; `semi_axes.0` runs along `angle` (from vertical), `semi_axes.1` across it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LesionSpec {
    pub center: (f64, f64),
    pub semi_axes: (f64, f64),
    pub angle: f64,
    pub contrast: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderedCore {
    /// Intensities in `[1/255, 1]`, not quantized.
    pub image: Image,
    pub needle_mask: Mask,
    pub lesion_mask: Mask,
}

/// Per-core latents not visible in the dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoreLatent {
    pub core_id: String,
    pub subject_id: String,
    pub core_latent: f64,
    pub severity: Option<f64>,
    pub contrast: f64,
    pub involvement: f64,
    pub grade_group: u8,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GroundTruth {
    pub lesion_masks: BTreeMap<String, Mask>,
    pub grade_groups: BTreeMap<String, u8>,
    pub burden: BTreeMap<String, f64>,
    pub cores: Vec<CoreLatent>,
}

fn axes(angle: f64) -> ((f64, f64), (f64, f64)) {
    let along = (angle.cos(), angle.sin());
    let across = (-angle.sin(), angle.cos());
    (along, across)
}

fn project(p: (f64, f64), origin: (f64, f64), dir: (f64, f64)) -> f64 {
    (p.0 - origin.0) * dir.0 + (p.1 - origin.1) * dir.1
}

impl NeedleSpec {
    fn end(&self) -> (f64, f64) {
        let (d, _) = axes(self.angle);
        (self.top.0 + self.length * d.0, self.top.1 + self.length * d.1)
    }

    fn validate(&self, size: usize) -> Result<()> {
        if !(self.width >= 3.0) {
            return Err(Error::invalid(format!("needle width {} below 3 px", self.width)));
        }
        if !(self.length > 0.0) {
            return Err(Error::invalid("needle length must be positive"));
        }
        let s = size as f64;
        let half = self.width / 2.0;
        for (r, c) in [self.top, self.end()] {
            if r - half < 0.0 || c - half < 0.0 || r + half > s || c + half > s {
                return Err(Error::invalid(format!("needle {self:?} leaves the {size}×{size} image")));
            }
        }
        Ok(())
    }

    fn contains(&self, p: (f64, f64)) -> bool {
        let (d, n) = axes(self.angle);
        let t = project(p, self.top, d);
        (0.0..=self.length).contains(&t) && project(p, self.top, n).abs() <= self.width / 2.0
    }
}

impl LesionSpec {
    fn validate(&self, size: usize) -> Result<()> {
        let (a, b) = self.semi_axes;
        if !(a > 0.0 && b > 0.0) {
            return Err(Error::invalid("lesion semi-axes must be positive"));
        }
        if !(self.contrast >= 0.0) {
            return Err(Error::invalid("lesion contrast must be ≥ 0"));
        }
        let (sin, cos) = self.angle.sin_cos();
        let half_r = ((a * cos).powi(2) + (b * sin).powi(2)).sqrt();
        let half_c = ((a * sin).powi(2) + (b * cos).powi(2)).sqrt();
        let s = size as f64;
        let (r, c) = self.center;
        if r - half_r < 0.0 || c - half_c < 0.0 || r + half_r > s || c + half_c > s {
            return Err(Error::invalid(format!("lesion {self:?} leaves the {size}×{size} image")));
        }
        Ok(())
    }

    fn contains(&self, p: (f64, f64)) -> bool {
        let (d, n) = axes(self.angle);
        let u = project(p, self.center, d) / self.semi_axes.0;
        let v = project(p, self.center, n) / self.semi_axes.1;
        u * u + v * v <= 1.0
    }
}

fn pixel_mask(size: usize, inside: impl Fn((f64, f64)) -> bool) -> Mask {
    Array2::from_shape_fn((size, size), |(r, c)| inside((r as f64 + 0.5, c as f64 + 0.5)))
}

/// Unit-variance Gaussian field: white noise smoothed by a separable 5-tap binomial kernel.
fn smooth_field(rng: &mut ChaCha8Rng, size: usize) -> Array2<f64> {
    let k = KERNEL.len();
    let pad = size + k - 1;
    let noise: Vec<f64> = (0..pad * pad).map(|_| StandardNormal.sample(rng)).collect();
    let mut rows = vec![0.0; pad * size];
    for r in 0..pad {
        for c in 0..size {
            rows[r * size + c] = (0..k).map(|j| KERNEL[j] * noise[r * pad + c + j]).sum();
        }
    }
    let norm = 1.0 / KERNEL.iter().map(|v| v * v).sum::<f64>();
    Array2::from_shape_fn((size, size), |(r, c)| {
        (0..k).map(|j| KERNEL[j] * rows[(r + j) * size + c]).sum::<f64>() * norm
    })
}

/// Renders one core: a log-normal speckle-like field whose log-intensity is shifted by
/// `contrast · LOG_STD` and scaled by `1 + 0.1 · contrast` inside the lesion.
pub fn render_core(
    background_seed: u64,
    lesion: Option<&LesionSpec>,
    needle: &NeedleSpec,
    size: usize,
) -> Result<RenderedCore> {
    needle.validate(size)?;
    if let Some(l) = lesion {
        l.validate(size)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(background_seed);
    let field = smooth_field(&mut rng, size);
    let needle_mask = pixel_mask(size, |p| needle.contains(p));
    let lesion_mask = match lesion {
        Some(l) => pixel_mask(size, |p| l.contains(p)),
        None => Array2::from_elem((size, size), false),
    };
    let contrast = lesion.map_or(0.0, |l| l.contrast);
    let floor = 1.0 / 255.0;
    let image = Array2::from_shape_fn((size, size), |(r, c)| {
        let f = field[[r, c]];
        let log = if lesion_mask[[r, c]] {
            LOG_MEAN + contrast * LOG_STD + LOG_STD * (1.0 + 0.1 * contrast) * f
        } else {
            LOG_MEAN + LOG_STD * f
        };
        log.exp().clamp(floor, 1.0) as f32
    });
    Ok(RenderedCore {
        image,
        needle_mask,
        lesion_mask,
    })
}

/// `|needle ∩ lesion| / |needle|`.
pub fn oracle_involvement(needle_mask: &Mask, lesion_mask: &Mask) -> Result<f64> {
    if needle_mask.dim() != lesion_mask.dim() {
        return Err(Error::invalid("needle and lesion masks differ in shape"));
    }
    let n = needle_mask.iter().filter(|&&m| m).count();
    if n == 0 {
        return Err(Error::invalid("needle mask is empty"));
    }
    let hit = needle_mask.iter().zip(lesion_mask).filter(|(&a, &b)| a && b).count();
    Ok(hit as f64 / n as f64)
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn grade_from_severity(severity: f64) -> u8 {
    match severity {
        s if s < -0.8 => 1,
        s if s < -0.1 => 2,
        s if s < 0.6 => 3,
        s if s < 1.3 => 4,
        _ => 5,
    }
}

struct CoreDraw {
    core: BiopsyCore,
    lesion: Mask,
    latent: CoreLatent,
}

fn core_latent(cfg: &GenConfig, core_id: &str, burden: f64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &format!("latent/{core_id}")));
    let rho = cfg.subject_correlation;
    rho.sqrt() * burden + (1.0 - rho).sqrt() * normal(&mut rng)
}

struct CoreJob {
    subject_id: String,
    core_id: String,
    burden: f64,
    latent: f64,
    cancer: bool,
}

fn draw_core(cfg: &GenConfig, job: &CoreJob) -> Result<CoreDraw> {
    let size = IMAGE_SIZE;
    let s = size as f64;
    let (subject_id, core_id, burden) = (job.subject_id.as_str(), job.core_id.as_str(), job.burden);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &format!("core/{core_id}")));
    let (core_latent, cancer) = (job.latent, job.cancer);

    let width = 6.0;
    let length = 0.4 * s;
    let angle = rng.random_range(-10.0f64..10.0).to_radians();
    let top = (rng.random_range(0.2 * s..0.4 * s), rng.random_range(0.3 * s..0.7 * s));
    let needle = NeedleSpec { top, angle, length, width };
    let background_seed: u64 = rng.random();

    let (lesion, target) = if cancer {
        let target: f64 = rng.random_range(0.05f64..1.1).min(1.0);
        let along = (target * length / 2.0).max(2.0);
        let across = rng.random_range(width..3.0 * width);
        let center_t = if along >= length / 2.0 {
            length / 2.0
        } else {
            rng.random_range(along..length - along)
        };
        let (d, _) = axes(angle);
        let jitter = rng.random_range(-5.0f64..5.0).to_radians();
        let contrast = (cfg.texture_contrast * (1.0 + cfg.involvement_contrast_gain * (target - 0.5))).max(0.0);
        let spec = LesionSpec {
            center: (top.0 + center_t * d.0, top.1 + center_t * d.1),
            semi_axes: (along, across),
            angle: angle + jitter,
            contrast,
        };
        (Some(spec), target)
    } else {
        (None, 0.0)
    };
    let rendered = render_core(background_seed, lesion.as_ref(), &needle, size)?;
    let involvement = oracle_involvement(&rendered.needle_mask, &rendered.lesion_mask)?;
    if cancer && involvement == 0.0 {
        return Err(Error::invalid(format!("core {core_id}: lesion misses the needle")));
    }
    let (grade_group, severity) = if cancer {
        let sev = 0.8 * burden + 1.5 * (target - 0.5) + 0.5 * normal(&mut rng);
        (grade_from_severity(sev), Some(sev))
    } else {
        (0, None)
    };
    let reference = cfg.reference_scores.then(|| {
        let r = 1.5 + 0.7 * f64::from(grade_group) + 0.8 * normal(&mut rng);
        r.round().clamp(1.0, 5.0) as u8
    });
    let quantized = rendered.image.mapv(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8);
    let image = preprocess_image(quantized.view())?;
    Ok(CoreDraw {
        core: BiopsyCore {
            core_id: core_id.to_string(),
            subject_id: subject_id.to_string(),
            image,
            needle_mask: rendered.needle_mask,
            grade_group,
            involvement,
            risk_score_reference: reference,
        },
        lesion: rendered.lesion_mask,
        latent: CoreLatent {
            core_id: core_id.to_string(),
            subject_id: subject_id.to_string(),
            core_latent,
            severity,
            contrast: lesion.map_or(0.0, |l| l.contrast),
            involvement,
            grade_group,
        },
    })
}

fn draw_subject(cfg: &GenConfig, subject_id: &str) -> (f64, f64, f64, f64, bool) {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &format!("subject/{subject_id}")));
    let burden = normal(&mut rng);
    let s = cfg.metadata_signal;
    let psa = (6.0f64.ln() + 0.5 * (s * burden + (1.0 - s * s).sqrt() * normal(&mut rng))).exp();
    let a = 0.3 * s;
    let age = (65.0 + 7.0 * (a * burden + (1.0 - a * a).sqrt() * normal(&mut rng))).clamp(40.0, 90.0);
    let volume = 40.0 * (0.3 * normal(&mut rng)).exp();
    let family = rng.random_bool(0.15);
    (burden, age, psa, psa / volume, family)
}

/// Generates subjects, cores and the hidden ground truth. Deterministic under `cfg.seed`;
/// cores are rendered in parallel from independently derived seeds.
///
/// Each core carries a latent `√ρ·burden + √(1−ρ)·noise`; the `round(prevalence · n)` cores
/// with the highest latents are cancerous, so the marginal is exact while cancer still
/// clusters within subjects.
pub fn generate_dataset(cfg: &GenConfig) -> Result<(Dataset, GroundTruth)> {
    cfg.validate()?;
    let mut subjects = Vec::with_capacity(cfg.n_subjects);
    let mut burden = BTreeMap::new();
    let mut jobs = Vec::new();
    for i in 0..cfg.n_subjects {
        let sid = format!("S{i:04}");
        let (z, age, psa, psad, family) = draw_subject(cfg, &sid);
        let cores: Vec<String> = (0..cfg.cores_per_subject).map(|j| format!("{sid}-C{j}")).collect();
        for cid in &cores {
            jobs.push(CoreJob {
                subject_id: sid.clone(),
                core_id: cid.clone(),
                burden: z,
                latent: core_latent(cfg, cid, z),
                cancer: false,
            });
        }
        burden.insert(sid.clone(), z);
        subjects.push(Subject {
            subject_id: sid,
            age,
            psa,
            psad: Some(psad),
            family_history: Some(family),
            cores,
        });
    }
    let n_cancer = (cfg.lesion_prevalence * jobs.len() as f64).round() as usize;
    let mut order: Vec<usize> = (0..jobs.len()).collect();
    order.sort_by(|&a, &b| jobs[b].latent.total_cmp(&jobs[a].latent).then(a.cmp(&b)));
    for &i in &order[..n_cancer] {
        jobs[i].cancer = true;
    }
    let draws: Vec<CoreDraw> = jobs
        .par_iter()
        .map(|job| draw_core(cfg, job))
        .collect::<Result<_>>()?;
    let mut truth = GroundTruth {
        burden,
        ..GroundTruth::default()
    };
    let mut cores = Vec::with_capacity(draws.len());
    for d in draws {
        truth.grade_groups.insert(d.core.core_id.clone(), d.core.grade_group);
        truth.lesion_masks.insert(d.core.core_id.clone(), d.lesion);
        truth.cores.push(d.latent);
        cores.push(d.core);
    }
    let dataset = Dataset { subjects, cores };
    dataset.validate()?;
    Ok((dataset, truth))
}

/// Writes `lesions/<core_id>.png` and `latent.csv` under `dir`.
pub fn save_ground_truth(truth: &GroundTruth, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    let lesions = dir.join("lesions");
    fs::create_dir_all(&lesions).map_err(|e| Error::io(&lesions, e))?;
    truth
        .lesion_masks
        .par_iter()
        .map(|(id, mask)| {
            let p = lesions.join(format!("{id}.png"));
            mask_to_png(mask)
                .save(&p)
                .map_err(|e| Error::io(&p, std::io::Error::other(e)))
        })
        .collect::<Result<Vec<()>>>()?;
    let path = dir.join("latent.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record([
        "core_id",
        "subject_id",
        "subject_burden",
        "core_latent",
        "severity",
        "contrast",
        "involvement",
        "grade_group",
    ])?;
    for c in &truth.cores {
        w.write_record([
            c.core_id.clone(),
            c.subject_id.clone(),
            format!("{:?}", truth.burden[&c.subject_id]),
            format!("{:?}", c.core_latent),
            c.severity.map_or(String::new(), |s| format!("{s:?}")),
            format!("{:?}", c.contrast),
            format!("{:?}", c.involvement),
            c.grade_group.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok(())
}

/// Generates a dataset and writes it to `out` with its `ground_truth/` directory. Returns the
/// manifest path.
pub fn synthesize(cfg: &GenConfig, out: impl AsRef<Path>) -> Result<(Dataset, PathBuf)> {
    let out = out.as_ref();
    let (dataset, truth) = generate_dataset(cfg)?;
    let manifest = save_dataset(&dataset, out)?;
    save_ground_truth(&truth, out.join("ground_truth"))?;
    Ok((dataset, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::auroc;
    use statrs::distribution::{ContinuousCDF, StudentsT};

    fn needle() -> NeedleSpec {
        NeedleSpec {
            top: (60.0, 128.0),
            angle: 0.0,
            length: 100.0,
            width: 6.0,
        }
    }

    fn lesion(contrast: f64) -> LesionSpec {
        LesionSpec {
            center: (110.0, 128.0),
            semi_axes: (40.0, 20.0),
            angle: 0.0,
            contrast,
        }
    }

    fn log_shift(contrast: f64, renders: u64) -> Vec<f64> {
        (0..renders)
            .map(|seed| {
                let r = render_core(seed, Some(&lesion(contrast)), &needle(), IMAGE_SIZE).unwrap();
                let (mut si, mut ni, mut so, mut no) = (0.0, 0.0, 0.0, 0.0);
                for (v, &m) in r.image.iter().zip(&r.lesion_mask) {
                    let l = f64::from(*v).ln();
                    if m {
                        si += l;
                        ni += 1.0;
                    } else {
                        so += l;
                        no += 1.0;
                    }
                }
                si / ni - so / no
            })
            .collect()
    }

    #[test]
    fn zero_contrast_lesion_is_indistinguishable() {
        let d = log_shift(0.0, 100);
        let n = d.len() as f64;
        let mean = d.iter().sum::<f64>() / n;
        let sd = (d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        let t = mean / (sd / n.sqrt());
        let dist = StudentsT::new(0.0, 1.0, n - 1.0).unwrap();
        let p = 2.0 * (1.0 - dist.cdf(t.abs()));
        assert!(p > 0.01, "t = {t}, p = {p}");
    }

    #[test]
    fn contrast_two_shifts_log_mean() {
        let d = log_shift(2.0, 100);
        let mean = d.iter().sum::<f64>() / d.len() as f64;
        let configured = 2.0 * LOG_STD;
        assert!((mean - configured).abs() <= 0.1 * configured, "shift {mean}");
    }

    #[test]
    fn involvement_oracle_examples() {
        let mut needle = Array2::from_elem((4, 4), false);
        let mut lesion = Array2::from_elem((4, 4), false);
        for i in 0..10 {
            needle[[i / 4, i % 4]] = true;
        }
        for i in 0..4 {
            lesion[[0, i]] = true;
        }
        lesion[[3, 3]] = true;
        assert_eq!(oracle_involvement(&needle, &lesion).unwrap(), 0.4);
        assert_eq!(oracle_involvement(&needle, &Array2::from_elem((4, 4), false)).unwrap(), 0.0);
        assert_eq!(oracle_involvement(&needle, &Array2::from_elem((4, 4), true)).unwrap(), 1.0);
        assert!(oracle_involvement(&Array2::from_elem((4, 4), false), &lesion).is_err());
    }

    #[test]
    fn covering_lesion_gives_full_involvement() {
        let big = LesionSpec {
            semi_axes: (70.0, 30.0),
            ..lesion(1.0)
        };
        let r = render_core(3, Some(&big), &needle(), IMAGE_SIZE).unwrap();
        assert_eq!(oracle_involvement(&r.needle_mask, &r.lesion_mask).unwrap(), 1.0);
    }

    #[test]
    fn invalid_specs_rejected() {
        let thin = NeedleSpec { width: 2.0, ..needle() };
        assert!(render_core(0, None, &thin, IMAGE_SIZE).is_err());
        let off = LesionSpec {
            center: (10.0, 10.0),
            ..lesion(1.0)
        };
        assert!(render_core(0, Some(&off), &needle(), IMAGE_SIZE).is_err());
        let cfg = GenConfig {
            n_subjects: 0,
            ..GenConfig::default()
        };
        assert!(generate_dataset(&cfg).is_err());
    }

    fn small(seed: u64) -> GenConfig {
        GenConfig {
            n_subjects: 6,
            cores_per_subject: 4,
            seed,
            ..GenConfig::default()
        }
    }

    #[test]
    fn generation_is_deterministic_on_disk() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        synthesize(&small(7), a.path()).unwrap();
        synthesize(&small(7), b.path()).unwrap();
        for f in ["manifest.csv", "images/S0003-C1.png", "ground_truth/latent.csv"] {
            assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
        }
        let (d1, _) = generate_dataset(&small(7)).unwrap();
        let (d2, _) = generate_dataset(&small(8)).unwrap();
        assert_ne!(d1.cores[0].image, d2.cores[0].image);
        let loaded = crate::data::load_dataset(a.path()).unwrap();
        assert_eq!(loaded, d1);
    }

    #[test]
    fn zero_prevalence_means_no_cancer() {
        let cfg = GenConfig {
            lesion_prevalence: 0.0,
            ..small(1)
        };
        let (d, t) = generate_dataset(&cfg).unwrap();
        assert!(d.cores.iter().all(|c| c.grade_group == 0 && c.involvement == 0.0));
        assert!(t.lesion_masks.values().all(|m| !m.iter().any(|&x| x)));
    }

    #[test]
    fn prevalence_and_ground_truth_consistency() {
        let cfg = GenConfig {
            n_subjects: 125,
            cores_per_subject: 8,
            lesion_prevalence: 0.3,
            seed: 11,
            ..GenConfig::default()
        };
        let (d, t) = generate_dataset(&cfg).unwrap();
        let positive = d.cores.iter().filter(|c| c.grade_group > 0).count() as f64 / d.cores.len() as f64;
        assert!((0.25..=0.35).contains(&positive), "{positive}");
        for c in &d.cores {
            let oracle = oracle_involvement(&c.needle_mask, &t.lesion_masks[&c.core_id]).unwrap();
            assert_eq!(c.involvement, oracle);
            assert_eq!(t.grade_groups[&c.core_id], c.grade_group);
            if c.grade_group > 0 {
                assert!(c.involvement > 0.0);
            }
        }
        assert!(d.cores.iter().any(|c| c.grade_group >= 3));
        assert!(d.cores.iter().any(|c| (1..3).contains(&c.grade_group)));
    }

    fn subject_labels(d: &Dataset) -> (Vec<f64>, Vec<bool>) {
        let psa = d.subjects.iter().map(|s| s.psa.ln()).collect();
        let sick = d
            .subjects
            .iter()
            .map(|s| d.cores.iter().any(|c| c.subject_id == s.subject_id && c.grade_group > 0))
            .collect();
        (psa, sick)
    }

    fn correlation(x: &[f64], y: &[bool]) -> f64 {
        let n = x.len() as f64;
        let yf: Vec<f64> = y.iter().map(|&b| f64::from(u8::from(b))).collect();
        let mx = x.iter().sum::<f64>() / n;
        let my = yf.iter().sum::<f64>() / n;
        let cov: f64 = x.iter().zip(&yf).map(|(a, b)| (a - mx) * (b - my)).sum();
        let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
        let vy: f64 = yf.iter().map(|b| (b - my).powi(2)).sum();
        cov / (vx * vy).sqrt()
    }

    #[test]
    fn metadata_signal_controls_psa_coupling() {
        let base = GenConfig {
            n_subjects: 1000,
            cores_per_subject: 1,
            texture_contrast: 0.0,
            seed: 5,
            ..GenConfig::default()
        };
        let (d0, _) = generate_dataset(&GenConfig {
            metadata_signal: 0.0,
            ..base.clone()
        })
        .unwrap();
        let (x, y) = subject_labels(&d0);
        assert!(correlation(&x, &y).abs() < 0.1);
        let ages: Vec<f64> = d0.subjects.iter().map(|s| s.age).collect();
        assert!(correlation(&ages, &y).abs() < 0.1);

        let (d1, _) = generate_dataset(&GenConfig {
            n_subjects: 200,
            cores_per_subject: 8,
            metadata_signal: 1.0,
            ..base
        })
        .unwrap();
        let (x, y) = subject_labels(&d1);
        let auc = auroc(&x, &y).unwrap();
        assert!(auc >= 0.8, "PSA subject AUROC {auc}");
    }
}

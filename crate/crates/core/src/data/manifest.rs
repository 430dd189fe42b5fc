//! On-disk dataset: a CSV manifest plus one grayscale PNG per image and per needle mask.
//!
//! ```text
//! subject_id,core_id,grade_group,involvement_pct,age_years,psa_ng_ml,psad,family_history,reference_score,image_path,mask_path
//! ```
//!
//! `psad`, `family_history` and `reference_score` may be empty. Paths are relative to the
//! manifest. Masks hold the values 0 and 255 only.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, ImageReader};
use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::preprocess::{preprocess_image, resize_mask_nearest};
use super::types::{BiopsyCore, Dataset, Mask, Subject, IMAGE_SIZE};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.csv";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ManifestRow {
    subject_id: String,
    core_id: String,
    grade_group: i64,
    involvement_pct: String,
    age_years: f64,
    psa_ng_ml: f64,
    psad: Option<f64>,
    family_history: Option<String>,
    reference_score: Option<i64>,
    image_path: String,
    mask_path: String,
}

/// Accepts either the manifest file itself or the directory containing `manifest.csv`.
pub fn resolve_manifest(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    }
}

pub fn load_dataset(manifest_path: impl AsRef<Path>) -> Result<Dataset> {
    let manifest = resolve_manifest(manifest_path.as_ref());
    let root = manifest.parent().map(Path::to_path_buf).unwrap_or_default();
    let file = fs::File::open(&manifest).map_err(|e| Error::io(&manifest, e))?;
    let mut reader = csv::Reader::from_reader(file);

    let mut rows = Vec::new();
    for (i, rec) in reader.deserialize::<ManifestRow>().enumerate() {
        let row = rec.map_err(|e| Error::Load {
            row: i + 1,
            core_id: String::from("?"),
            message: format!("schema violation: {e}"),
        })?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::invalid(format!("{} lists no cores", manifest.display())));
    }

    let cores: Vec<BiopsyCore> = rows
        .par_iter()
        .enumerate()
        .map(|(i, row)| load_core(&root, i + 1, row))
        .collect::<Result<_>>()?;

    let mut subjects: Vec<Subject> = Vec::new();
    let mut index: BTreeMap<String, usize> = BTreeMap::new();
    for (i, row) in rows.iter().enumerate() {
        let fail = |message: String| Error::Load {
            row: i + 1,
            core_id: row.core_id.clone(),
            message,
        };
        let family_history = match row.family_history.as_deref().map(str::trim) {
            None | Some("") => None,
            Some("1") | Some("true") | Some("yes") => Some(true),
            Some("0") | Some("false") | Some("no") => Some(false),
            Some(other) => return Err(fail(format!("family_history `{other}` is not a boolean"))),
        };
        let candidate = Subject {
            subject_id: row.subject_id.clone(),
            age: row.age_years,
            psa: row.psa_ng_ml,
            psad: row.psad,
            family_history,
            cores: vec![row.core_id.clone()],
        };
        match index.get(&row.subject_id) {
            Some(&s) => {
                let existing = &mut subjects[s];
                if existing.age != candidate.age
                    || existing.psa != candidate.psa
                    || existing.psad != candidate.psad
                    || existing.family_history != candidate.family_history
                {
                    return Err(fail(format!(
                        "clinical markers disagree with earlier rows of subject `{}`",
                        row.subject_id
                    )));
                }
                existing.cores.push(row.core_id.clone());
            }
            None => {
                candidate.validate().map_err(|e| fail(e.to_string()))?;
                index.insert(row.subject_id.clone(), subjects.len());
                subjects.push(candidate);
            }
        }
    }

    let dataset = Dataset { subjects, cores };
    dataset.validate()?;
    Ok(dataset)
}

fn load_core(root: &Path, row_no: usize, row: &ManifestRow) -> Result<BiopsyCore> {
    let fail = |message: String| Error::Load {
        row: row_no,
        core_id: row.core_id.clone(),
        message,
    };
    if !(0..=5).contains(&row.grade_group) {
        return Err(fail(format!("grade_group {} outside 0..5", row.grade_group)));
    }
    let involvement = percent_to_fraction(&row.involvement_pct)
        .ok_or_else(|| fail(format!("involvement_pct `{}` is not a number", row.involvement_pct)))?;
    if !(0.0..=1.0).contains(&involvement) {
        return Err(fail(format!("involvement_pct {} outside [0, 100]", row.involvement_pct)));
    }
    let reference = match row.reference_score {
        None => None,
        Some(r @ 1..=5) => Some(r as u8),
        Some(r) => return Err(fail(format!("reference_score {r} outside 1..5"))),
    };

    let image_path = root.join(&row.image_path);
    let raw = read_gray(&image_path).map_err(&fail)?;
    let image = preprocess_image(raw.view()).map_err(|e| fail(e.to_string()))?;

    let mask_path = root.join(&row.mask_path);
    let raw_mask = read_gray(&mask_path).map_err(&fail)?;
    if let Some(v) = raw_mask.iter().find(|&&v| v != 0 && v != 255) {
        return Err(fail(format!("mask {} has value {v}; expected 0 or 255", mask_path.display())));
    }
    let mask = raw_mask.mapv(|v| v == 255);
    let needle_mask = if mask.dim() == (IMAGE_SIZE, IMAGE_SIZE) {
        mask
    } else {
        resize_mask_nearest(mask.view(), IMAGE_SIZE, IMAGE_SIZE).map_err(|e| fail(e.to_string()))?
    };

    let core = BiopsyCore {
        core_id: row.core_id.clone(),
        subject_id: row.subject_id.clone(),
        image,
        needle_mask,
        grade_group: row.grade_group as u8,
        involvement,
        risk_score_reference: reference,
    };
    core.validate().map_err(|e| fail(e.to_string()))?;
    Ok(core)
}

fn read_gray(path: &Path) -> std::result::Result<Array2<u8>, String> {
    let img = ImageReader::open(path)
        .map_err(|e| format!("cannot open {}: {e}", path.display()))?
        .decode()
        .map_err(|e| format!("cannot decode {}: {e}", path.display()))?
        .into_luma8();
    let (w, h) = img.dimensions();
    Array2::from_shape_vec((h as usize, w as usize), img.into_raw()).map_err(|e| e.to_string())
}

/// Quantizes a `[0, 1]` image to 8 bits.
pub fn quantize(image: &Array2<f32>) -> GrayImage {
    let (h, w) = image.dim();
    let data = image.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    GrayImage::from_raw(w as u32, h as u32, data).expect("buffer matches dimensions")
}

pub fn mask_to_png(mask: &Mask) -> GrayImage {
    let (h, w) = mask.dim();
    let data = mask.iter().map(|&v| if v { 255 } else { 0 }).collect();
    GrayImage::from_raw(w as u32, h as u32, data).expect("buffer matches dimensions")
}

/// Writes the dataset under `dir` (`manifest.csv`, `images/`, `masks/`) and returns the manifest path.
pub fn save_dataset(dataset: &Dataset, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    dataset.validate()?;
    for sub in ["images", "masks"] {
        let p = dir.join(sub);
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    let subjects = dataset.subject_index();

    dataset
        .cores
        .par_iter()
        .map(|core| {
            let img_path = dir.join("images").join(format!("{}.png", core.core_id));
            quantize(&core.image)
                .save(&img_path)
                .map_err(|e| Error::io(&img_path, std::io::Error::other(e)))?;
            let mask_path = dir.join("masks").join(format!("{}.png", core.core_id));
            mask_to_png(&core.needle_mask)
                .save(&mask_path)
                .map_err(|e| Error::io(&mask_path, std::io::Error::other(e)))
        })
        .collect::<Result<Vec<()>>>()?;

    let manifest = dir.join(MANIFEST_FILE);
    let mut writer = csv::Writer::from_path(&manifest)?;
    for core in &dataset.cores {
        let s = &dataset.subjects[subjects[core.subject_id.as_str()]];
        writer.serialize(ManifestRow {
            subject_id: core.subject_id.clone(),
            core_id: core.core_id.clone(),
            grade_group: i64::from(core.grade_group),
            involvement_pct: fraction_to_percent(core.involvement),
            age_years: s.age,
            psa_ng_ml: s.psa,
            psad: s.psad,
            family_history: s.family_history.map(|b| if b { "1" } else { "0" }.to_string()),
            reference_score: core.risk_score_reference.map(i64::from),
            image_path: format!("images/{}.png", core.core_id),
            mask_path: format!("masks/{}.png", core.core_id),
        })?;
    }
    writer.flush().map_err(|e| Error::io(&manifest, e))?;
    Ok(manifest)
}

/// Decimal percentage string for `fraction`, formed by shifting the decimal point of its
/// shortest round-trip representation. Parsing it back with [`percent_to_fraction`] is exact.
fn fraction_to_percent(fraction: f64) -> String {
    let repr = format!("{fraction}");
    let (int, frac) = repr.split_once('.').unwrap_or((&repr, ""));
    let frac = format!("{frac:0<2}");
    let int = format!("{int}{}", &frac[..2]);
    let int = int.trim_start_matches('0');
    let int = if int.is_empty() { "0" } else { int };
    let rest = frac[2..].trim_end_matches('0');
    if rest.is_empty() {
        int.to_string()
    } else {
        format!("{int}.{rest}")
    }
}

/// Divides a decimal percentage by 100 in decimal before rounding to `f64`.
fn percent_to_fraction(pct: &str) -> Option<f64> {
    let pct = pct.trim();
    let shifted = match pct.split_once(['e', 'E']) {
        Some((mantissa, exp)) => format!("{mantissa}e{}", exp.parse::<i32>().ok()? - 2),
        None => format!("{pct}e-2"),
    };
    shifted.parse().ok().filter(|v: &f64| v.is_finite())
}

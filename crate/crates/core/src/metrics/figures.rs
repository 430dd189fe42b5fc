use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use ndarray::Array2;

use super::report::EvalReport;
use crate::data::{BiopsyCore, Category};
use crate::error::{Error, Result};

/// Height in pixels of the score legend strip below each overlay.
pub const LEGEND_HEIGHT: u32 = 24;
const CELL: u32 = 16;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct FigureFiles {
    pub overlays: Vec<PathBuf>,
    pub checkerboard_png: PathBuf,
    pub checkerboard_csv: PathBuf,
}

fn score_color(score: u8) -> Rgb<u8> {
    match score {
        1 => Rgb([26, 152, 80]),
        2 => Rgb([145, 207, 96]),
        3 => Rgb([254, 224, 139]),
        4 => Rgb([252, 141, 89]),
        _ => Rgb([215, 48, 39]),
    }
}

fn category_color(c: Category) -> Rgb<u8> {
    match c {
        Category::Benign => Rgb([255, 255, 255]),
        Category::IsPca => Rgb([120, 120, 120]),
        Category::CsPca => Rgb([0, 0, 0]),
    }
}

fn hot(h: f64) -> [f64; 3] {
    let h = h.clamp(0.0, 1.0);
    [(3.0 * h).min(1.0), (3.0 * h - 1.0).clamp(0.0, 1.0), (3.0 * h - 2.0).clamp(0.0, 1.0)]
}

/// Heatmap alpha-blended over the B-mode image with the needle outline, above a five-segment
/// legend whose `score` segment is highlighted.
pub fn overlay_image(core: &BiopsyCore, heatmap: &Array2<f64>, score: Option<u8>) -> Result<RgbImage> {
    let (h, w) = core.image.dim();
    if heatmap.dim() != (h, w) {
        return Err(Error::invalid(format!(
            "heatmap {:?} does not match image {:?}",
            heatmap.dim(),
            (h, w)
        )));
    }
    let mut img = RgbImage::new(w as u32, h as u32 + LEGEND_HEIGHT);
    for r in 0..h {
        for c in 0..w {
            let gray = f64::from(core.image[[r, c]]);
            let v = heatmap[[r, c]];
            let a = 0.6 * v.clamp(0.0, 1.0);
            let col = hot(v);
            let px = [0, 1, 2].map(|k| (((1.0 - a) * gray + a * col[k]) * 255.0).round() as u8);
            img.put_pixel(c as u32, r as u32, Rgb(px));
        }
    }
    let m = &core.needle_mask;
    for r in 0..h {
        for c in 0..w {
            if !m[[r, c]] {
                continue;
            }
            let edge = r == 0
                || c == 0
                || r + 1 == h
                || c + 1 == w
                || !m[[r - 1, c]]
                || !m[[r + 1, c]]
                || !m[[r, c - 1]]
                || !m[[r, c + 1]];
            if edge {
                img.put_pixel(c as u32, r as u32, Rgb([0, 255, 255]));
            }
        }
    }
    let seg = w as u32 / 5;
    for g in 1..=5u8 {
        let x0 = (u32::from(g) - 1) * seg;
        let x1 = if g == 5 { w as u32 } else { x0 + seg };
        let active = score == Some(g);
        let base = score_color(g);
        let fill = if active { base } else { Rgb(base.0.map(|v| v / 3)) };
        for y in h as u32..h as u32 + LEGEND_HEIGHT {
            for x in x0..x1 {
                let border = active && (y == h as u32 || y + 1 == h as u32 + LEGEND_HEIGHT || x == x0 || x + 1 == x1);
                img.put_pixel(x, y, if border { Rgb([255, 255, 255]) } else { fill });
            }
        }
    }
    Ok(img)
}

fn sanitize(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

fn save_png(img: &RgbImage, path: &Path) -> Result<()> {
    img.save(path)
        .map_err(|e| Error::io(path, std::io::Error::other(e.to_string())))
}

/// Writes one overlay per core that has a heatmap, plus the subjects × cores checkerboard
/// (PNG and backing CSV, one row per subject).
pub fn emit_figures(
    report: &EvalReport,
    heatmaps: &BTreeMap<String, Array2<f64>>,
    cores: &[BiopsyCore],
    out_dir: impl AsRef<Path>,
) -> Result<FigureFiles> {
    let out = out_dir.as_ref();
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let by_id: BTreeMap<&str, &BiopsyCore> = cores.iter().map(|c| (c.core_id.as_str(), c)).collect();
    let mut files = FigureFiles::default();
    for row in &report.cores {
        let Some(heat) = heatmaps.get(&row.core_id) else { continue };
        let core = by_id
            .get(row.core_id.as_str())
            .ok_or_else(|| Error::invalid(format!("no core data for {}", row.core_id)))?;
        let img = overlay_image(core, heat, row.model_score)?;
        let score = row.model_score.map_or("na".to_string(), |s| s.to_string());
        let path = out.join(format!("overlay_{}_score{score}.png", sanitize(&row.core_id)));
        save_png(&img, &path)?;
        files.overlays.push(path);
    }

    let rows: Vec<(&str, Vec<&super::report::CoreRow>)> = report
        .patients
        .iter()
        .map(|p| {
            let cs = p
                .cores
                .iter()
                .filter_map(|id| report.cores.iter().find(|c| &c.core_id == id))
                .collect();
            (p.subject_id.as_str(), cs)
        })
        .collect();
    let width = rows.iter().map(|(_, c)| c.len()).max().unwrap_or(0).max(1) as u32;
    let mut board = RgbImage::from_pixel(width * CELL, (rows.len() as u32).max(1) * CELL, Rgb([40, 40, 40]));
    for (r, (_, cs)) in rows.iter().enumerate() {
        for (c, core) in cs.iter().enumerate() {
            let fill = core.model_score.map_or(Rgb([90, 90, 90]), score_color);
            let mark = category_color(core.category);
            let (x0, y0) = (c as u32 * CELL, r as u32 * CELL);
            for y in 1..CELL - 1 {
                for x in 1..CELL - 1 {
                    let inner = (5..11).contains(&x) && (5..11).contains(&y);
                    board.put_pixel(x0 + x, y0 + y, if inner { mark } else { fill });
                }
            }
        }
    }
    files.checkerboard_png = out.join("checkerboard.png");
    save_png(&board, &files.checkerboard_png)?;

    files.checkerboard_csv = out.join("checkerboard.csv");
    let mut w = csv::Writer::from_path(&files.checkerboard_csv)?;
    let mut header = vec!["subject_id".to_string(), "diagnosis".into(), "patient_score".into()];
    for i in 1..=width {
        header.push(format!("core_{i}"));
        header.push(format!("score_{i}"));
        header.push(format!("pathology_{i}"));
    }
    w.write_record(&header)?;
    for (p, (_, cs)) in report.patients.iter().zip(&rows) {
        let mut rec = vec![
            p.subject_id.clone(),
            p.diagnosis.to_string(),
            p.model_score.map_or(String::new(), |s| s.to_string()),
        ];
        for i in 0..width as usize {
            match cs.get(i) {
                Some(c) => {
                    rec.push(c.core_id.clone());
                    rec.push(c.model_score.map_or(String::new(), |s| s.to_string()));
                    rec.push(c.category.to_string());
                }
                None => rec.extend([String::new(), String::new(), String::new()]),
            }
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(&files.checkerboard_csv, e))?;
    Ok(files)
}

//! Image resampling onto the fixed model grid.
//!
//! Bilinear resampling uses half-pixel centers: output pixel `i` samples source coordinate
//! `(i + 0.5) * in / out - 0.5`, clamped to the valid range. Masks use nearest neighbour so they
//! stay binary.

use ndarray::{Array2, ArrayView2};

use super::types::{Image, Mask, IMAGE_SIZE};
use crate::error::{Error, Result};

/// Resizes an 8-bit grayscale image to `IMAGE_SIZE × IMAGE_SIZE` and scales it by `1/255`.
pub fn preprocess_image(raw: ArrayView2<u8>) -> Result<Image> {
    preprocess_image_to(raw, IMAGE_SIZE, IMAGE_SIZE)
}

pub fn preprocess_image_to(raw: ArrayView2<u8>, out_h: usize, out_w: usize) -> Result<Image> {
    check_input(raw.dim())?;
    let src = raw.mapv(f64::from);
    let resized = resize_bilinear(src.view(), out_h, out_w)?;
    Ok(resized.mapv(|v| (v / 255.0).clamp(0.0, 1.0) as f32))
}

/// Same as [`preprocess_image`] for floating point sources, which are clamped to `[0, 1]`.
pub fn preprocess_float_image(raw: ArrayView2<f32>) -> Result<Image> {
    check_input(raw.dim())?;
    let src = raw.mapv(|v| f64::from(v).clamp(0.0, 1.0));
    let resized = resize_bilinear(src.view(), IMAGE_SIZE, IMAGE_SIZE)?;
    Ok(resized.mapv(|v| v.clamp(0.0, 1.0) as f32))
}

fn check_input((h, w): (usize, usize)) -> Result<()> {
    if h < 2 || w < 2 {
        return Err(Error::invalid(format!("image must be at least 2×2, got {h}×{w}")));
    }
    Ok(())
}

/// Source sample positions and weights for one axis.
pub(crate) fn bilinear_taps(in_len: usize, out_len: usize) -> Vec<(usize, usize, f64)> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|i| {
            let x = ((i as f64 + 0.5) * scale - 0.5).max(0.0);
            let x0 = (x.floor() as usize).min(in_len - 1);
            let x1 = (x0 + 1).min(in_len - 1);
            let frac = if x0 == in_len - 1 { 0.0 } else { x - x0 as f64 };
            (x0, x1, frac)
        })
        .collect()
}

pub fn resize_bilinear(src: ArrayView2<f64>, out_h: usize, out_w: usize) -> Result<Array2<f64>> {
    let (h, w) = src.dim();
    if h == 0 || w == 0 || out_h == 0 || out_w == 0 {
        return Err(Error::invalid("cannot resize empty image"));
    }
    let rows = bilinear_taps(h, out_h);
    let cols = bilinear_taps(w, out_w);
    let mut out = Array2::zeros((out_h, out_w));
    for (i, &(r0, r1, fr)) in rows.iter().enumerate() {
        for (j, &(c0, c1, fc)) in cols.iter().enumerate() {
            let top = src[[r0, c0]] * (1.0 - fc) + src[[r0, c1]] * fc;
            let bottom = src[[r1, c0]] * (1.0 - fc) + src[[r1, c1]] * fc;
            out[[i, j]] = top * (1.0 - fr) + bottom * fr;
        }
    }
    Ok(out)
}

/// Linear operator `out_len × in_len` that applies 1-D bilinear resampling along one axis.
pub(crate) fn bilinear_matrix(in_len: usize, out_len: usize) -> Array2<f64> {
    let mut m = Array2::zeros((out_len, in_len));
    for (i, (x0, x1, f)) in bilinear_taps(in_len, out_len).into_iter().enumerate() {
        m[[i, x0]] += 1.0 - f;
        m[[i, x1]] += f;
    }
    m
}

pub fn resize_mask_nearest(src: ArrayView2<bool>, out_h: usize, out_w: usize) -> Result<Mask> {
    let (h, w) = src.dim();
    if h == 0 || w == 0 {
        return Err(Error::invalid("cannot resize empty mask"));
    }
    let pick = |i: usize, n_in: usize, n_out: usize| {
        (((i as f64 + 0.5) * n_in as f64 / n_out as f64).floor() as usize).min(n_in - 1)
    };
    Ok(Array2::from_shape_fn((out_h, out_w), |(i, j)| {
        src[[pick(i, h, out_h), pick(j, w, out_w)]]
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn constant_wide_image_maps_to_constant() {
        let raw = Array2::from_elem((833, 1372), 128u8);
        let out = preprocess_image(raw.view()).unwrap();
        assert_eq!(out.dim(), (256, 256));
        let expected = (128.0f64 / 255.0) as f32;
        assert!(out.iter().all(|&v| v == expected));
        assert!((expected - 0.50196).abs() < 1e-5);
    }

    #[test]
    fn native_size_only_rescales() {
        let raw = Array2::from_shape_fn((256, 256), |(i, j)| ((i * 7 + j * 3) % 256) as u8);
        let out = preprocess_image(raw.view()).unwrap();
        for ((i, j), v) in out.indexed_iter() {
            assert_eq!(*v, (raw[[i, j]] as f64 / 255.0) as f32);
        }
    }

    #[test]
    fn ramp_downsample_matches_hand_computation() {
        // 4×4 ramp with value 16*(4r + c). Half-pixel centers put each 2×2 output sample at
        // the midpoint of a 2×2 source block, so each output is the block average.
        let raw = Array2::from_shape_fn((4, 4), |(r, c)| (16 * (4 * r + c)) as u8);
        let out = resize_bilinear(raw.mapv(f64::from).view(), 2, 2).unwrap();
        let expected = array![[40.0, 72.0], [168.0, 200.0]];
        assert_eq!(out, expected);
        let scaled = preprocess_image_to(raw.view(), 2, 2).unwrap();
        assert!((scaled[[0, 0]] - (40.0 / 255.0) as f32).abs() < 1e-7);
    }

    #[test]
    fn upsample_clamps_at_borders() {
        let src = array![[0.0, 1.0]];
        let out = resize_bilinear(src.view(), 1, 4).unwrap();
        // centers at -0.25 (clamped to 0), 0.25, 0.75, 1.25 (clamped to last)
        assert_eq!(out, array![[0.0, 0.25, 0.75, 1.0]]);
    }

    #[test]
    fn bilinear_matrix_agrees_with_direct_resize() {
        let src = Array2::from_shape_fn((5, 7), |(i, j)| (i * 7 + j) as f64 * 0.1);
        let direct = resize_bilinear(src.view(), 12, 9).unwrap();
        let via = bilinear_matrix(5, 12).dot(&src).dot(&bilinear_matrix(7, 9).t());
        for (a, b) in direct.iter().zip(via.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn degenerate_inputs_rejected() {
        assert!(preprocess_image(Array2::<u8>::zeros((1, 10)).view()).is_err());
        assert!(preprocess_image(Array2::<u8>::zeros((0, 0)).view()).is_err());
    }

    #[test]
    fn conforming_input_is_idempotent_up_to_quantization() {
        let raw = Array2::from_shape_fn((256, 256), |(i, j)| ((i * 13 + j * 5) % 256) as u8);
        let once = preprocess_image(raw.view()).unwrap();
        let requant = once.mapv(|v| (v * 255.0).round() as u8);
        let twice = preprocess_image(requant.view()).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn nearest_mask_stays_binary_and_preserves_identity() {
        let m = Array2::from_shape_fn((8, 8), |(i, j)| i == j);
        assert_eq!(resize_mask_nearest(m.view(), 8, 8).unwrap(), m);
        let up = resize_mask_nearest(m.view(), 16, 16).unwrap();
        assert_eq!(up.iter().filter(|&&v| v).count(), 8 * 4);
    }
}

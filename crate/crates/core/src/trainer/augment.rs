use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{Image, Mask};

/// Shifts image and mask by `(dy, dx)` pixels, zero-filling the vacated border.
pub fn translate(image: &Image, mask: &Mask, dy: isize, dx: isize) -> (Image, Mask) {
    let (h, w) = image.dim();
    let src = |r: usize, c: usize| -> Option<(usize, usize)> {
        let sr = r as isize - dy;
        let sc = c as isize - dx;
        (sr >= 0 && sc >= 0 && (sr as usize) < h && (sc as usize) < w).then(|| (sr as usize, sc as usize))
    };
    let img = Array2::from_shape_fn((h, w), |(r, c)| src(r, c).map_or(0.0, |p| image[p]));
    let m = Array2::from_shape_fn((h, w), |(r, c)| src(r, c).is_some_and(|p| mask[p]));
    (img, m)
}

/// Random integer offset in `[-max_shift, max_shift]²` drawn from `seed`.
pub fn translation_offset(max_shift: usize, seed: u64) -> (isize, isize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = max_shift as i64;
    (rng.random_range(-m..=m) as isize, rng.random_range(-m..=m) as isize)
}

/// Random translation of image and needle mask by the same offset. An offset that would push
/// the whole needle out of frame is replaced by no shift.
pub fn augment_translate(image: &Image, mask: &Mask, max_shift: usize, seed: u64) -> (Image, Mask) {
    let (dy, dx) = translation_offset(max_shift, seed);
    let (img, m) = translate(image, mask, dy, dx);
    if m.iter().any(|&v| v) {
        (img, m)
    } else {
        (image.clone(), mask.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> (Image, Mask) {
        let img = Array2::from_shape_fn((12, 10), |(r, c)| (r * 10 + c) as f32 / 120.0);
        let mask = Array2::from_shape_fn((12, 10), |(r, c)| (3..9).contains(&r) && (4..6).contains(&c));
        (img, mask)
    }

    #[test]
    fn zero_shift_is_identity() {
        let (img, m) = sample();
        assert_eq!(translate(&img, &m, 0, 0), (img.clone(), m.clone()));
        assert_eq!(augment_translate(&img, &m, 0, 9), (img, m));
    }

    #[test]
    fn shift_moves_pixels_and_zero_fills() {
        let (img, m) = sample();
        let (i2, m2) = translate(&img, &m, 2, -1);
        assert_eq!(i2[[5, 3]], img[[3, 4]]);
        assert_eq!(i2[[0, 0]], 0.0);
        assert_eq!(i2[[4, 9]], 0.0);
        assert_eq!(m2[[5, 3]], m[[3, 4]]);
    }

    #[test]
    fn fixed_seed_fixed_offset() {
        assert_eq!(translation_offset(32, 5), translation_offset(32, 5));
        let (img, m) = sample();
        assert_eq!(augment_translate(&img, &m, 3, 5), augment_translate(&img, &m, 3, 5));
    }

    proptest! {
        #[test]
        fn mask_never_grows(dy in -12isize..12, dx in -12isize..12) {
            let (img, m) = sample();
            let (_, m2) = translate(&img, &m, dy, dx);
            let before = m.iter().filter(|&&v| v).count();
            let after = m2.iter().filter(|&&v| v).count();
            prop_assert!(after <= before);
            let fits = (3 + dy >= 0) && (9 + dy <= 12) && (4 + dx >= 0) && (6 + dx <= 10);
            if fits {
                prop_assert_eq!(after, before);
            }
        }

        #[test]
        fn offsets_within_bound(max in 0usize..40, seed in any::<u64>()) {
            let (dy, dx) = translation_offset(max, seed);
            prop_assert!(dy.unsigned_abs() <= max && dx.unsigned_abs() <= max);
        }
    }
}

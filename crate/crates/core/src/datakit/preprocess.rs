use dfseg_nn::Scalar;
use ndarray::Array2;

use crate::{Image, Mask};

/// Edge length every slice is brought to before training.
pub const SLICE_SIZE: usize = 256;

/// Bilinear resampling with half-pixel centers and edge clamping.
pub fn resize_bilinear<T: Scalar>(img: &Image<T>, out_h: usize, out_w: usize) -> Image<T> {
    let (h, w) = img.dim();
    if (h, w) == (out_h, out_w) {
        return img.clone();
    }
    let coords = |o: usize, n_out: usize, n_in: usize| -> (usize, usize, T) {
        let src = ((o as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).clamp(0.0, (n_in - 1) as f64);
        let lo = src.floor() as usize;
        let hi = (lo + 1).min(n_in - 1);
        (lo, hi, T::lit(src - lo as f64))
    };
    let xs: Vec<_> = (0..out_w).map(|x| coords(x, out_w, w)).collect();
    Array2::from_shape_fn((out_h, out_w), |(y, x)| {
        let (y0, y1, fy) = coords(y, out_h, h);
        let (x0, x1, fx) = xs[x];
        let top = img[[y0, x0]] * (T::one() - fx) + img[[y0, x1]] * fx;
        let bottom = img[[y1, x0]] * (T::one() - fx) + img[[y1, x1]] * fx;
        top * (T::one() - fy) + bottom * fy
    })
}

/// Nearest-neighbour resampling; output stays binary.
pub fn resize_nearest(mask: &Mask, out_h: usize, out_w: usize) -> Mask {
    let (h, w) = mask.dim();
    if (h, w) == (out_h, out_w) {
        return mask.clone();
    }
    let pick =
        |o: usize, n_out: usize, n_in: usize| (((o as f64 + 0.5) * n_in as f64 / n_out as f64) as usize).min(n_in - 1);
    Array2::from_shape_fn((out_h, out_w), |(y, x)| mask[[pick(y, out_h, h), pick(x, out_w, w)]])
}

/// `(x − min) / (max − min)`; a constant slice maps to zeros.
pub fn min_max_normalize<T: Scalar>(img: &Image<T>) -> Image<T> {
    let lo = img.iter().copied().fold(T::infinity(), T::min);
    let hi = img.iter().copied().fold(T::neg_infinity(), T::max);
    let range = hi - lo;
    if !(range > T::zero()) {
        return Array2::zeros(img.dim());
    }
    img.mapv(|v| ((v - lo) / range).max(T::zero()).min(T::one()))
}

/// Resizes to `size × size` (bilinear) when `size` is given, then min-max
/// normalizes into [0, 1].
pub fn preprocess_slice<T: Scalar>(raw: &Image<T>, size: Option<usize>) -> Image<T> {
    match size {
        Some(s) => min_max_normalize(&resize_bilinear(raw, s, s)),
        None => min_max_normalize(raw),
    }
}

/// Nearest-neighbour resize of a mask to `size × size`.
pub fn preprocess_mask(mask: &Mask, size: Option<usize>) -> Mask {
    match size {
        Some(s) => resize_nearest(mask, s, s),
        None => mask.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn large_ramp_resizes_to_256_and_spans_unit_range() {
        let raw: Image<f64> = Array2::from_shape_fn((512, 512), |(y, x)| ((y + x) % 256) as f64);
        let out = preprocess_slice(&raw, Some(SLICE_SIZE));
        assert_eq!(out.dim(), (256, 256));
        let lo = out.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = out.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(lo, 0.0);
        assert_eq!(hi, 1.0);
    }

    #[test]
    fn constant_slice_maps_to_zero() {
        let raw: Image<f32> = Array2::from_elem((7, 3), 42.0);
        let out = preprocess_slice(&raw, Some(16));
        assert_eq!(out.dim(), (16, 16));
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unit_mode_min_max_arithmetic() {
        let raw: Image<f64> = array![[10.0, 20.0], [30.0, 40.0]];
        let out = preprocess_slice(&raw, None);
        let want = [[0.0, 1.0 / 3.0], [2.0 / 3.0, 1.0]];
        for y in 0..2 {
            for x in 0..2 {
                assert!((out[[y, x]] - want[y][x]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn bilinear_preserves_a_linear_ramp_interior() {
        let raw: Image<f64> = Array2::from_shape_fn((4, 4), |(_, x)| x as f64);
        let up = resize_bilinear(&raw, 8, 8);
        // output x=3 samples source x = 3.5·0.5 − 0.5 = 1.25
        assert!((up[[2, 3]] - 1.25).abs() < 1e-12);
    }

    #[test]
    fn nearest_downsample_samples_pixel_centres() {
        // output pixel o reads source pixel floor((o + 0.5)·2) = 1, 3, 5
        let m: Mask = Array2::from_shape_fn((6, 6), |(y, x)| y < 3 && x < 2);
        let r = resize_nearest(&m, 3, 3);
        assert_eq!(
            r,
            array![[true, false, false], [false, false, false], [false, false, false]]
        );
    }

    proptest! {
        #[test]
        fn preprocessed_values_lie_in_unit_interval(
            h in 1usize..20, w in 1usize..20, size in 1usize..24, seed in any::<u64>()
        ) {
            let raw: Image<f64> = Array2::from_shape_fn((h, w), |(y, x)| {
                ((seed.wrapping_mul(6364136223846793005).wrapping_add((y * 31 + x) as u64) >> 33) % 4096) as f64
            });
            let out = preprocess_slice(&raw, Some(size));
            prop_assert_eq!(out.dim(), (size, size));
            prop_assert!(out.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }
}

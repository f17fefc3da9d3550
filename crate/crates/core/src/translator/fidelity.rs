//! Mean squared error and SSIM between a real slice and its translation.
//!
//! SSIM uses an 11×11 Gaussian window (σ = 1.5), unit dynamic range
//! (C1 = 0.01², C2 = 0.03²), and averages the SSIM map over windows that
//! lie fully inside the image. Images smaller than 11 pixels on a side use
//! the largest odd window that fits.

use dfseg_nn::Scalar;
use ndarray::Array2;

use crate::datakit::Fidelity;
use crate::error::{Error, Result};
use crate::Image;

const WINDOW: usize = 11;
const SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

fn gaussian(size: usize) -> Vec<f64> {
    let c = (size / 2) as f64;
    let w: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * SIGMA * SIGMA)).exp())
        .collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Separable valid-mode filtering.
fn filter(img: &Array2<f64>, k: &[f64]) -> Array2<f64> {
    let (h, w) = img.dim();
    let n = k.len();
    let rows = Array2::from_shape_fn((h, w + 1 - n), |(y, x)| {
        (0..n).map(|i| k[i] * img[[y, x + i]]).sum::<f64>()
    });
    Array2::from_shape_fn((h + 1 - n, w + 1 - n), |(y, x)| {
        (0..n).map(|i| k[i] * rows[[y + i, x]]).sum::<f64>()
    })
}

pub fn ssim<T: Scalar>(a: &Image<T>, b: &Image<T>) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::validation(format!(
            "ssim shapes differ: {:?} vs {:?}",
            a.dim(),
            b.dim()
        )));
    }
    let (h, w) = a.dim();
    let side = h.min(w);
    if side == 0 {
        return Err(Error::validation("ssim of an empty image"));
    }
    let size = if side >= WINDOW {
        WINDOW
    } else if side % 2 == 1 {
        side
    } else {
        side - 1
    };
    let k = gaussian(size);
    let x = a.mapv(|v| v.to_f64().unwrap_or(f64::NAN));
    let y = b.mapv(|v| v.to_f64().unwrap_or(f64::NAN));
    let mx = filter(&x, &k);
    let my = filter(&y, &k);
    let sxx = filter(&(&x * &x), &k);
    let syy = filter(&(&y * &y), &k);
    let sxy = filter(&(&x * &y), &k);
    let mut total = 0.0;
    for i in 0..mx.len() {
        let (mx, my) = (mx.as_slice().unwrap()[i], my.as_slice().unwrap()[i]);
        let vx = sxx.as_slice().unwrap()[i] - mx * mx;
        let vy = syy.as_slice().unwrap()[i] - my * my;
        let cxy = sxy.as_slice().unwrap()[i] - mx * my;
        total += ((2.0 * mx * my + C1) * (2.0 * cxy + C2)) / ((mx * mx + my * my + C1) * (vx + vy + C2));
    }
    Ok(total / mx.len() as f64)
}

pub fn mse<T: Scalar>(a: &Image<T>, b: &Image<T>) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::validation(format!(
            "mse shapes differ: {:?} vs {:?}",
            a.dim(),
            b.dim()
        )));
    }
    let sum: f64 = a
        .iter()
        .zip(b.iter())
        .map(|(&p, &q)| {
            let d = (p - q).to_f64().unwrap_or(f64::NAN);
            d * d
        })
        .sum();
    Ok(sum / a.len().max(1) as f64)
}

pub fn fidelity_metrics<T: Scalar>(real: &Image<T>, fake: &Image<T>) -> Result<Fidelity> {
    Ok(Fidelity {
        mse: mse(real, fake)?,
        ssim: ssim(real, fake)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn texture(h: usize, w: usize) -> Image<f64> {
        Array2::from_shape_fn((h, w), |(y, x)| {
            0.3 + 0.2 * ((x as f64 * 0.7).sin() * (y as f64 * 0.4).cos())
        })
    }

    #[test]
    fn identical_images() {
        let a = texture(32, 32);
        let f = fidelity_metrics(&a, &a).unwrap();
        assert_eq!(f.mse, 0.0);
        assert!((f.ssim - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_offset_mse() {
        let a = texture(24, 24);
        let b = a.mapv(|v| v + 0.1);
        assert!((mse(&a, &b).unwrap() - 0.01).abs() < 1e-12);
    }

    #[test]
    fn symmetric() {
        let a = texture(20, 30);
        let b = a.mapv(|v| (v * v + 0.05).min(1.0));
        assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn small_images_shrink_the_window() {
        let a = texture(4, 6);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn window_is_normalized() {
        let k = gaussian(11);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(k[0], k[10]);
    }
}

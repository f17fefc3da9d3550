//! Naive reference implementations used as oracles, plus fixture builders.
#![allow(dead_code)]

use dfseg::Mask;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn mask(h: usize, w: usize, on: &[(usize, usize)]) -> Mask {
    let mut m = Mask::from_elem((h, w), false);
    for &p in on {
        m[p] = true;
    }
    m
}

/// `n` mask pairs of size `side × side` with densities drawn per mask,
/// including a sprinkling of empty masks.
pub fn random_pairs(n: usize, side: usize, seed: u64) -> Vec<(Mask, Mask)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = |rng: &mut ChaCha8Rng| {
        let p: f64 = if rng.random_bool(0.05) {
            0.0
        } else {
            rng.random_range(0.01..0.7)
        };
        Mask::from_shape_fn((side, side), |_| rng.random_bool(p))
    };
    (0..n).map(|_| (draw(&mut rng), draw(&mut rng))).collect()
}

fn count(m: &Mask) -> usize {
    m.iter().filter(|&&v| v).count()
}

fn inter(a: &Mask, b: &Mask) -> usize {
    a.iter().zip(b.iter()).filter(|(&x, &y)| x && y).count()
}

pub fn naive_dsc(a: &Mask, b: &Mask) -> f64 {
    let (na, nb) = (count(a), count(b));
    if na + nb == 0 {
        return 1.0;
    }
    2.0 * inter(a, b) as f64 / (na + nb) as f64
}

pub fn naive_jsc(a: &Mask, b: &Mask) -> f64 {
    let union = a.iter().zip(b.iter()).filter(|(&x, &y)| x || y).count();
    if union == 0 {
        return 1.0;
    }
    inter(a, b) as f64 / union as f64
}

pub fn naive_surface(m: &Mask) -> Vec<(i64, i64)> {
    let (h, w) = m.dim();
    let at = |y: i64, x: i64| y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w && m[[y as usize, x as usize]];
    let mut out = Vec::new();
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            if at(y, x)
                && [(y - 1, x), (y + 1, x), (y, x - 1), (y, x + 1)]
                    .iter()
                    .any(|&(v, u)| !at(v, u))
            {
                out.push((y, x));
            }
        }
    }
    out
}

fn directed(from: &[(i64, i64)], to: &[(i64, i64)]) -> Vec<f64> {
    from.iter()
        .map(|&(y, x)| {
            to.iter()
                .map(|&(v, u)| (((y - v).pow(2) + (x - u).pow(2)) as f64).sqrt())
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

/// `(hd_px, mad_px)` by exhaustive search over surface pairs.
pub fn naive_surface_distances(a: &Mask, b: &Mask) -> (f64, f64) {
    let (sa, sb) = (naive_surface(a), naive_surface(b));
    let (h, w) = a.dim();
    let diag = ((h * h + w * w) as f64).sqrt();
    match (sa.is_empty(), sb.is_empty()) {
        (true, true) => (0.0, 0.0),
        (true, false) | (false, true) => (diag, diag),
        _ => {
            let ab = directed(&sa, &sb);
            let ba = directed(&sb, &sa);
            let hd = ab.iter().chain(&ba).copied().fold(0.0, f64::max);
            let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
            (hd, 0.5 * (mean(&ab) + mean(&ba)))
        }
    }
}

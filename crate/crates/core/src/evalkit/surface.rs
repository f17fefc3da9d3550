//! Boundary extraction and boundary-to-boundary distances.
//!
//! Nearest-surface distances come from an exact Euclidean distance
//! transform (lower envelope of parabolas, separably over columns then
//! rows), so cost is linear in the pixel count rather than quadratic in the
//! boundary length. Distances are between pixel centres.

use dfseg_nn::Scalar;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::overlap::check_shapes;
use crate::error::Result;
use crate::Mask;

/// Foreground pixels with at least one 4-neighbour that is background or
/// off-image, in raster order as `(row, col)`.
pub fn surface_points(mask: &Mask) -> Vec<(usize, usize)> {
    let (h, w) = mask.dim();
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if !mask[[y, x]] {
                continue;
            }
            let border = y == 0
                || x == 0
                || y + 1 == h
                || x + 1 == w
                || !mask[[y - 1, x]]
                || !mask[[y + 1, x]]
                || !mask[[y, x - 1]]
                || !mask[[y, x + 1]];
            if border {
                out.push((y, x));
            }
        }
    }
    out
}

const FAR: f64 = 1e30;

/// 1-D squared distance transform of sampled function `f` (in place).
fn edt_1d(f: &mut [f64], v: &mut [usize], z: &mut [f64], d: &mut [f64]) {
    let n = f.len();
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        let qf = q as f64;
        let mut s;
        loop {
            let pf = v[k] as f64;
            s = ((f[q] + qf * qf) - (f[v[k]] + pf * pf)) / (2.0 * qf - 2.0 * pf);
            // z[0] is -inf, so this never steps below the first parabola
            if s <= z[k] && k > 0 {
                k -= 1;
            } else {
                break;
            }
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for q in 0..n {
        let qf = q as f64;
        while z[k + 1] < qf {
            k += 1;
        }
        let p = v[k] as f64;
        d[q] = (qf - p) * (qf - p) + f[v[k]];
    }
    f.copy_from_slice(&d[..n]);
}

/// Squared Euclidean distance from every pixel to the nearest `true` seed.
pub fn squared_distance_map(seeds: &Mask) -> Array2<f64> {
    let (h, w) = seeds.dim();
    let mut g = seeds.mapv(|s| if s { 0.0 } else { FAR });
    let n = h.max(w);
    let (mut v, mut z, mut d) = (vec![0usize; n], vec![0.0; n + 1], vec![0.0; n]);
    let mut line = vec![0.0; n];
    for x in 0..w {
        for y in 0..h {
            line[y] = g[[y, x]];
        }
        edt_1d(&mut line[..h], &mut v, &mut z, &mut d);
        for y in 0..h {
            g[[y, x]] = line[y];
        }
    }
    for y in 0..h {
        for x in 0..w {
            line[x] = g[[y, x]];
        }
        edt_1d(&mut line[..w], &mut v, &mut z, &mut d);
        for x in 0..w {
            g[[y, x]] = line[x];
        }
    }
    g
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DegenerateFlag {
    None,
    BothEmpty,
    OneEmpty,
}

impl DegenerateFlag {
    pub fn as_str(self) -> &'static str {
        match self {
            DegenerateFlag::None => "none",
            DegenerateFlag::BothEmpty => "both_empty",
            DegenerateFlag::OneEmpty => "one_empty",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "none" => Some(DegenerateFlag::None),
            "both_empty" => Some(DegenerateFlag::BothEmpty),
            "one_empty" => Some(DegenerateFlag::OneEmpty),
            _ => None,
        }
    }
}

/// A surface distance in pixels and normalized by the image diagonal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceDistance<T> {
    pub px: T,
    pub norm: T,
    pub flag: DegenerateFlag,
}

/// Both surface distances of a mask pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceMetrics<T> {
    pub hausdorff: SurfaceDistance<T>,
    pub mad: SurfaceDistance<T>,
}

pub fn diagonal(dim: (usize, usize)) -> f64 {
    ((dim.0 * dim.0 + dim.1 * dim.1) as f64).sqrt()
}

fn nearest(from: &[(usize, usize)], to_map: &Array2<f64>) -> Vec<f64> {
    from.iter().map(|&p| to_map[p].sqrt()).collect()
}

/// Hausdorff and mean absolute surface distance in one pass.
///
/// Both empty: zero with `BothEmpty`. Exactly one empty: the image
/// diagonal with `OneEmpty`.
pub fn surface_metrics<T: Scalar>(a: &Mask, b: &Mask) -> Result<SurfaceMetrics<T>> {
    check_shapes(a, b)?;
    let diag = diagonal(a.dim());
    let sa = surface_points(a);
    let sb = surface_points(b);
    let (hd, mad, flag) = match (sa.is_empty(), sb.is_empty()) {
        (true, true) => (0.0, 0.0, DegenerateFlag::BothEmpty),
        (true, false) | (false, true) => (diag, diag, DegenerateFlag::OneEmpty),
        (false, false) => {
            let seeds = |pts: &[(usize, usize)]| {
                let mut m = Mask::from_elem(a.dim(), false);
                for &p in pts {
                    m[p] = true;
                }
                m
            };
            let ab = nearest(&sa, &squared_distance_map(&seeds(&sb)));
            let ba = nearest(&sb, &squared_distance_map(&seeds(&sa)));
            let max = |v: &[f64]| v.iter().copied().fold(0.0, f64::max);
            let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
            (
                max(&ab).max(max(&ba)),
                0.5 * (mean(&ab) + mean(&ba)),
                DegenerateFlag::None,
            )
        }
    };
    let make = |px: f64| SurfaceDistance {
        px: T::lit(px),
        norm: T::lit(px / diag),
        flag,
    };
    Ok(SurfaceMetrics {
        hausdorff: make(hd),
        mad: make(mad),
    })
}

/// Symmetric Hausdorff distance between mask surfaces.
pub fn hausdorff<T: Scalar>(a: &Mask, b: &Mask) -> Result<SurfaceDistance<T>> {
    Ok(surface_metrics(a, b)?.hausdorff)
}

/// Mean of the two directed mean nearest-surface distances.
pub fn mad<T: Scalar>(a: &Mask, b: &Mask) -> Result<SurfaceDistance<T>> {
    Ok(surface_metrics(a, b)?.mad)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(h: usize, w: usize, on: &[(usize, usize)]) -> Mask {
        let mut m = Mask::from_elem((h, w), false);
        for &p in on {
            m[p] = true;
        }
        m
    }

    #[test]
    fn single_pixel_is_its_own_surface() {
        assert_eq!(surface_points(&mask(1, 1, &[(0, 0)])), vec![(0, 0)]);
    }

    #[test]
    fn filled_square_excludes_centre() {
        let m = Mask::from_shape_fn((5, 5), |(y, x)| (1..4).contains(&y) && (1..4).contains(&x));
        let s = surface_points(&m);
        assert_eq!(s.len(), 8);
        assert!(!s.contains(&(2, 2)));
    }

    #[test]
    fn empty_mask_has_no_surface() {
        assert!(surface_points(&mask(3, 3, &[])).is_empty());
    }

    #[test]
    fn three_four_five() {
        let a = mask(6, 6, &[(0, 0)]);
        let b = mask(6, 6, &[(3, 4)]);
        let hd: SurfaceDistance<f64> = hausdorff(&a, &b).unwrap();
        assert_eq!(hd.px, 5.0);
        assert_eq!(hd.flag, DegenerateFlag::None);
        assert!((hd.norm - 5.0 / 72f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn directed_asymmetry_fixture() {
        // A = {(0,0),(0,3)}, B = {(0,0)}: directed 3 and 0
        let a = mask(4, 4, &[(0, 0), (0, 3)]);
        let b = mask(4, 4, &[(0, 0)]);
        assert_eq!(hausdorff::<f64>(&a, &b).unwrap().px, 3.0);
        assert_eq!(mad::<f64>(&a, &b).unwrap().px, 0.75);
    }

    #[test]
    fn degenerate_cases() {
        let e = mask(3, 4, &[]);
        let f = mask(3, 4, &[(1, 1)]);
        let both: SurfaceMetrics<f64> = surface_metrics(&e, &e).unwrap();
        assert_eq!(both.hausdorff.px, 0.0);
        assert_eq!(both.mad.flag, DegenerateFlag::BothEmpty);
        let one: SurfaceMetrics<f64> = surface_metrics(&e, &f).unwrap();
        assert_eq!(one.hausdorff.px, 5.0);
        assert_eq!(one.mad.px, 5.0);
        assert_eq!(one.hausdorff.norm, 1.0);
        assert_eq!(one.hausdorff.flag, DegenerateFlag::OneEmpty);
    }

    #[test]
    fn distance_map_matches_brute_force() {
        let seeds = mask(7, 9, &[(0, 0), (6, 8), (3, 2)]);
        let d = squared_distance_map(&seeds);
        for y in 0..7 {
            for x in 0..9 {
                let want = [(0usize, 0usize), (6, 8), (3, 2)]
                    .iter()
                    .map(|&(sy, sx)| (y as f64 - sy as f64).powi(2) + (x as f64 - sx as f64).powi(2))
                    .fold(f64::INFINITY, f64::min);
                assert_eq!(d[[y, x]], want);
            }
        }
    }
}

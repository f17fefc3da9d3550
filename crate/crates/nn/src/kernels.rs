//! Convolution and pooling kernels over single NCHW samples.
//!
//! Convolutions lower to GEMM through im2col, processed in row tiles so the
//! column buffer stays bounded regardless of image size.

use crate::error::{NnError, Result};
use crate::scalar::Scalar;

const TILE_COLS: usize = 4096;

/// Geometry of a strided, zero-padded square-kernel convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub channels: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn new(channels: usize, h: usize, w: usize, k: usize, stride: usize, pad: usize) -> Result<Self> {
        if stride == 0 || k == 0 || h + 2 * pad < k || w + 2 * pad < k {
            return Err(NnError::Shape(format!(
                "kernel {k} stride {stride} pad {pad} does not fit a {h}x{w} input"
            )));
        }
        Ok(Self {
            channels,
            h,
            w,
            k,
            stride,
            pad,
            ho: (h + 2 * pad - k) / stride + 1,
            wo: (w + 2 * pad - k) / stride + 1,
        })
    }

    /// Geometry whose *input* is the output of a transposed convolution
    /// taking an `h × w` map to `(h-1)·s − 2p + k`.
    pub fn transposed(out_channels: usize, h: usize, w: usize, k: usize, stride: usize, pad: usize) -> Result<Self> {
        let oh = ((h - 1) * stride + k).checked_sub(2 * pad);
        let ow = ((w - 1) * stride + k).checked_sub(2 * pad);
        match (oh, ow) {
            (Some(oh), Some(ow)) if oh > 0 && ow > 0 => {
                let g = Self::new(out_channels, oh, ow, k, stride, pad)?;
                debug_assert_eq!((g.ho, g.wo), (h, w));
                Ok(g)
            }
            _ => Err(NnError::Shape(format!(
                "transposed kernel {k} stride {stride} pad {pad} collapses a {h}x{w} input"
            ))),
        }
    }

    fn patch(&self) -> usize {
        self.channels * self.k * self.k
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    fn tile_rows(&self) -> usize {
        (TILE_COLS / self.wo.max(1)).max(1)
    }
}

fn im2col<T: Scalar>(g: &ConvGeom, x: &[T], oy0: usize, oy1: usize, cols: &mut [T]) {
    let ncol = (oy1 - oy0) * g.wo;
    let (k, s, p) = (g.k, g.stride as isize, g.pad as isize);
    for c in 0..g.channels {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let dst = &mut cols[row * ncol..(row + 1) * ncol];
                for oy in oy0..oy1 {
                    let iy = oy as isize * s + ki as isize - p;
                    let seg = &mut dst[(oy - oy0) * g.wo..(oy - oy0 + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize {
                        seg.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, d) in seg.iter_mut().enumerate() {
                        let ix = ox as isize * s + kj as isize - p;
                        *d = if ix < 0 || ix >= g.w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im_add<T: Scalar>(g: &ConvGeom, cols: &[T], oy0: usize, oy1: usize, x: &mut [T]) {
    let ncol = (oy1 - oy0) * g.wo;
    let (k, s, p) = (g.k, g.stride as isize, g.pad as isize);
    for c in 0..g.channels {
        let plane = &mut x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let src = &cols[row * ncol..(row + 1) * ncol];
                for oy in oy0..oy1 {
                    let iy = oy as isize * s + ki as isize - p;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let seg = &src[(oy - oy0) * g.wo..(oy - oy0 + 1) * g.wo];
                    for (ox, &v) in seg.iter().enumerate() {
                        let ix = ox as isize * s + kj as isize - p;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

/// Forward convolution of one sample. `w` is `[cout, cin·k·k]`, `out` is
/// `[cout, ho·wo]` and is overwritten.
pub fn conv_forward<T: Scalar>(g: &ConvGeom, cout: usize, x: &[T], w: &[T], bias: Option<&[T]>, out: &mut [T]) {
    let hw = g.ho * g.wo;
    let patch = g.patch();
    if g.is_pointwise() {
        T::gemm(cout, patch, hw, T::one(), w, patch, 1, x, hw, 1, T::zero(), out, hw, 1);
    } else {
        let rows = g.tile_rows();
        let mut cols = vec![T::zero(); patch * rows * g.wo];
        let mut oy0 = 0;
        while oy0 < g.ho {
            let oy1 = (oy0 + rows).min(g.ho);
            let ncol = (oy1 - oy0) * g.wo;
            im2col(g, x, oy0, oy1, &mut cols[..patch * ncol]);
            T::gemm(
                cout,
                patch,
                ncol,
                T::one(),
                w,
                patch,
                1,
                &cols[..patch * ncol],
                ncol,
                1,
                T::zero(),
                &mut out[oy0 * g.wo..],
                hw,
                1,
            );
            oy0 = oy1;
        }
    }
    if let Some(b) = bias {
        for (co, &bv) in b.iter().enumerate() {
            for v in &mut out[co * hw..(co + 1) * hw] {
                *v += bv;
            }
        }
    }
}

/// Backward convolution of one sample. Accumulates into `dw` and `dx` when
/// given.
#[allow(clippy::too_many_arguments)]
pub fn conv_backward<T: Scalar>(
    g: &ConvGeom,
    cout: usize,
    x: &[T],
    w: &[T],
    dout: &[T],
    dw: Option<&mut [T]>,
    dx: Option<&mut [T]>,
) {
    let hw = g.ho * g.wo;
    let patch = g.patch();
    if g.is_pointwise() {
        if let Some(dw) = dw {
            T::gemm(cout, hw, patch, T::one(), dout, hw, 1, x, 1, hw, T::one(), dw, patch, 1);
        }
        if let Some(dx) = dx {
            T::gemm(patch, cout, hw, T::one(), w, 1, patch, dout, hw, 1, T::one(), dx, hw, 1);
        }
        return;
    }
    let rows = g.tile_rows();
    let mut cols = vec![T::zero(); patch * rows * g.wo];
    let mut dcols = if dx.is_some() {
        vec![T::zero(); patch * rows * g.wo]
    } else {
        Vec::new()
    };
    let mut dw = dw;
    let mut dx = dx;
    let mut oy0 = 0;
    while oy0 < g.ho {
        let oy1 = (oy0 + rows).min(g.ho);
        let ncol = (oy1 - oy0) * g.wo;
        let dtile = &dout[oy0 * g.wo..];
        if let Some(dw) = dw.as_deref_mut() {
            im2col(g, x, oy0, oy1, &mut cols[..patch * ncol]);
            T::gemm(
                cout,
                ncol,
                patch,
                T::one(),
                dtile,
                hw,
                1,
                &cols[..patch * ncol],
                1,
                ncol,
                T::one(),
                dw,
                patch,
                1,
            );
        }
        if let Some(dx) = dx.as_deref_mut() {
            let dc = &mut dcols[..patch * ncol];
            T::gemm(
                patch,
                cout,
                ncol,
                T::one(),
                w,
                1,
                patch,
                dtile,
                hw,
                1,
                T::zero(),
                dc,
                ncol,
                1,
            );
            col2im_add(g, dc, oy0, oy1, dx);
        }
        oy0 = oy1;
    }
}

/// Forward transposed convolution of one sample. `g` is the geometry from
/// [`ConvGeom::transposed`]; `w` is `[cin, cout·k·k]`; `x` is `[cin, ho·wo]`;
/// `out` is `[cout, h·w]` and is overwritten.
pub fn conv_transpose_forward<T: Scalar>(
    g: &ConvGeom,
    cin: usize,
    x: &[T],
    w: &[T],
    bias: Option<&[T]>,
    out: &mut [T],
) {
    let in_hw = g.ho * g.wo;
    let patch = g.patch();
    out.fill(T::zero());
    let rows = g.tile_rows();
    let mut cols = vec![T::zero(); patch * rows * g.wo];
    let mut oy0 = 0;
    while oy0 < g.ho {
        let oy1 = (oy0 + rows).min(g.ho);
        let ncol = (oy1 - oy0) * g.wo;
        let c = &mut cols[..patch * ncol];
        T::gemm(
            patch,
            cin,
            ncol,
            T::one(),
            w,
            1,
            patch,
            &x[oy0 * g.wo..],
            in_hw,
            1,
            T::zero(),
            c,
            ncol,
            1,
        );
        col2im_add(g, c, oy0, oy1, out);
        oy0 = oy1;
    }
    if let Some(b) = bias {
        let hw = g.h * g.w;
        for (co, &bv) in b.iter().enumerate() {
            for v in &mut out[co * hw..(co + 1) * hw] {
                *v += bv;
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn conv_transpose_backward<T: Scalar>(
    g: &ConvGeom,
    cin: usize,
    x: &[T],
    w: &[T],
    dout: &[T],
    dw: Option<&mut [T]>,
    dx: Option<&mut [T]>,
) {
    let in_hw = g.ho * g.wo;
    let patch = g.patch();
    let rows = g.tile_rows();
    let mut dcols = vec![T::zero(); patch * rows * g.wo];
    let mut dw = dw;
    let mut dx = dx;
    let mut oy0 = 0;
    while oy0 < g.ho {
        let oy1 = (oy0 + rows).min(g.ho);
        let ncol = (oy1 - oy0) * g.wo;
        let dc = &mut dcols[..patch * ncol];
        im2col(g, dout, oy0, oy1, dc);
        if let Some(dx) = dx.as_deref_mut() {
            T::gemm(
                cin,
                patch,
                ncol,
                T::one(),
                w,
                patch,
                1,
                dc,
                ncol,
                1,
                T::one(),
                &mut dx[oy0 * g.wo..],
                in_hw,
                1,
            );
        }
        if let Some(dw) = dw.as_deref_mut() {
            T::gemm(
                cin,
                ncol,
                patch,
                T::one(),
                &x[oy0 * g.wo..],
                in_hw,
                1,
                dc,
                1,
                ncol,
                T::one(),
                dw,
                patch,
                1,
            );
        }
        oy0 = oy1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct nested-loop convolution.
    fn direct(g: &ConvGeom, cout: usize, x: &[f64], w: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; cout * g.ho * g.wo];
        for co in 0..cout {
            for oy in 0..g.ho {
                for ox in 0..g.wo {
                    let mut acc = 0.0;
                    for c in 0..g.channels {
                        for ki in 0..g.k {
                            for kj in 0..g.k {
                                let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                                let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                                if iy < 0 || ix < 0 || iy >= g.h as isize || ix >= g.w as isize {
                                    continue;
                                }
                                acc += x[(c * g.h + iy as usize) * g.w + ix as usize]
                                    * w[((co * g.channels + c) * g.k + ki) * g.k + kj];
                            }
                        }
                    }
                    out[(co * g.ho + oy) * g.wo + ox] = acc;
                }
            }
        }
        out
    }

    fn ramp(n: usize, scale: f64) -> Vec<f64> {
        (0..n).map(|i| ((i * 7919) % 23) as f64 * scale - 0.4).collect()
    }

    #[test]
    fn conv_forward_matches_direct_loops() {
        for &(k, s, p) in &[(3, 1, 1), (3, 2, 1), (4, 2, 1), (1, 1, 0), (2, 2, 0)] {
            let g = ConvGeom::new(2, 6, 5, k, s, p).unwrap();
            let x = ramp(2 * 30, 0.05);
            let w = ramp(3 * 2 * k * k, 0.03);
            let mut out = vec![0.0; 3 * g.ho * g.wo];
            conv_forward(&g, 3, &x, &w, None, &mut out);
            let want = direct(&g, 3, &x, &w);
            for (a, b) in out.iter().zip(&want) {
                assert!((a - b).abs() < 1e-12, "k{k} s{s} p{p}");
            }
        }
    }

    #[test]
    fn transposed_is_adjoint_of_forward() {
        // <conv(x), y> == <x, convT(y)> with the same weights viewed as [cin_t, cout_t]
        let g = ConvGeom::new(3, 8, 8, 4, 2, 1).unwrap();
        let cout = 2;
        let x = ramp(3 * 64, 0.02);
        let w = ramp(cout * 3 * 16, 0.01);
        let y = ramp(cout * g.ho * g.wo, 0.07);
        let mut cx = vec![0.0; cout * g.ho * g.wo];
        conv_forward(&g, cout, &x, &w, None, &mut cx);
        let lhs: f64 = cx.iter().zip(&y).map(|(a, b)| a * b).sum();
        let gt = ConvGeom::transposed(3, g.ho, g.wo, 4, 2, 1).unwrap();
        let mut ty = vec![0.0; 3 * 64];
        conv_transpose_forward(&gt, cout, &y, &w, None, &mut ty);
        let rhs: f64 = ty.iter().zip(&x).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn rejects_kernel_larger_than_padded_input() {
        assert!(ConvGeom::new(1, 2, 2, 5, 1, 1).is_err());
    }
}

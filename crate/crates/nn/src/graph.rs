//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] is built fresh for every forward pass. Nodes are appended in
//! evaluation order, so reverse iteration is a valid topological order for
//! the backward sweep.

use crate::error::{NnError, Result};
use crate::kernels::{self, ConvGeom};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    ConvTranspose2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    Normalize {
        x: Var,
        per_instance: bool,
        inv_std: Vec<T>,
    },
    ChannelAffine {
        x: Var,
        scale: Var,
        shift: Var,
    },
    Relu(Var),
    LeakyRelu(Var, T),
    Tanh(Var),
    Sigmoid(Var),
    Softplus(Var),
    Clamp(Var, T, T),
    Abs(Var),
    Square(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddScalar(Var),
    MulScalar(Var, T),
    Sum(Var),
    Mean(Var),
    SumPerSample(Var),
    Concat(Vec<Var>),
    AvgPool2(Var),
    MaxPool2(Var, Vec<usize>),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Per-group statistics produced by a normalization node.
#[derive(Debug, Clone)]
pub struct NormStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
    /// Elements per group.
    pub count: usize,
}

pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    stats: Vec<(Var, NormStats<T>)>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn same_shape<T: Scalar>(op: &str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(NnError::Shape(format!("{op}: {:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

/// Visits every element index of normalization group `g`.
fn for_group(shape: (usize, usize, usize, usize), per_instance: bool, g: usize, mut f: impl FnMut(usize)) {
    let (n, c, h, w) = shape;
    let hw = h * w;
    if per_instance {
        for i in g * hw..(g + 1) * hw {
            f(i);
        }
    } else {
        for s in 0..n {
            let base = (s * c + g) * hw;
            for i in base..base + hw {
                f(i);
            }
        }
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            stats: Vec::new(),
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, parents: &[Var]) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Constant input; never receives a gradient.
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Differentiable leaf.
    pub fn param(&mut self, t: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Statistics of a node produced by [`Graph::batch_normalize`].
    pub fn norm_stats(&self, v: Var) -> Option<&NormStats<T>> {
        self.stats.iter().find(|(k, _)| *k == v).map(|(_, s)| s)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let (n, c, h, wd) = self.value(x).dims4();
        let ws = self.value(w).shape().to_vec();
        if ws.len() != 4 || ws[1] != c || ws[2] != ws[3] {
            return Err(NnError::Shape(format!(
                "conv2d: weight {ws:?} incompatible with input channels {c}"
            )));
        }
        let cout = ws[0];
        if let Some(b) = b {
            if self.value(b).numel() != cout {
                return Err(NnError::Shape(format!("conv2d: bias length != {cout}")));
            }
        }
        let geom = ConvGeom::new(c, h, wd, ws[2], stride, pad)?;
        let per_in = c * h * wd;
        let per_out = cout * geom.ho * geom.wo;
        let mut out = vec![T::zero(); n * per_out];
        {
            let xv = self.value(x).data();
            let wv = self.value(w).data();
            let bv = b.map(|b| self.value(b).data());
            for s in 0..n {
                kernels::conv_forward(
                    &geom,
                    cout,
                    &xv[s * per_in..(s + 1) * per_in],
                    wv,
                    bv,
                    &mut out[s * per_out..(s + 1) * per_out],
                );
            }
        }
        let value = Tensor::new(vec![n, cout, geom.ho, geom.wo], out)?;
        let mut parents = vec![x, w];
        parents.extend(b);
        Ok(self.push(value, Op::Conv2d { x, w, b, geom }, &parents))
    }

    /// Transposed convolution; weight is `[cin, cout, k, k]` and the output
    /// size is `(h − 1)·stride − 2·pad + k`.
    pub fn conv_transpose2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let (n, c, h, wd) = self.value(x).dims4();
        let ws = self.value(w).shape().to_vec();
        if ws.len() != 4 || ws[0] != c || ws[2] != ws[3] {
            return Err(NnError::Shape(format!(
                "conv_transpose2d: weight {ws:?} incompatible with input channels {c}"
            )));
        }
        let cout = ws[1];
        let geom = ConvGeom::transposed(cout, h, wd, ws[2], stride, pad)?;
        let per_in = c * h * wd;
        let per_out = cout * geom.h * geom.w;
        let mut out = vec![T::zero(); n * per_out];
        {
            let xv = self.value(x).data();
            let wv = self.value(w).data();
            let bv = b.map(|b| self.value(b).data());
            for s in 0..n {
                kernels::conv_transpose_forward(
                    &geom,
                    c,
                    &xv[s * per_in..(s + 1) * per_in],
                    wv,
                    bv,
                    &mut out[s * per_out..(s + 1) * per_out],
                );
            }
        }
        let value = Tensor::new(vec![n, cout, geom.h, geom.w], out)?;
        let mut parents = vec![x, w];
        parents.extend(b);
        Ok(self.push(value, Op::ConvTranspose2d { x, w, b, geom }, &parents))
    }

    fn normalize(&mut self, x: Var, per_instance: bool, eps: T) -> Var {
        let xt = self.value(x);
        let dims = xt.dims4();
        let (n, c, h, w) = dims;
        let groups = if per_instance { n * c } else { c };
        let count = if per_instance { h * w } else { n * h * w };
        let xd = xt.data();
        let mut out = vec![T::zero(); xt.numel()];
        let mut means = Vec::with_capacity(groups);
        let mut vars = Vec::with_capacity(groups);
        let mut inv_std = Vec::with_capacity(groups);
        let cnt = T::from_usize(count).unwrap();
        for g in 0..groups {
            let mut sum = T::zero();
            for_group(dims, per_instance, g, |i| sum += xd[i]);
            let mean = sum / cnt;
            let mut sq = T::zero();
            for_group(dims, per_instance, g, |i| {
                let d = xd[i] - mean;
                sq += d * d;
            });
            let var = sq / cnt;
            let inv = T::one() / (var + eps).sqrt();
            for_group(dims, per_instance, g, |i| out[i] = (xd[i] - mean) * inv);
            means.push(mean);
            vars.push(var);
            inv_std.push(inv);
        }
        let value = Tensor::new(xt.shape().to_vec(), out).expect("same shape");
        let v = self.push(
            value,
            Op::Normalize {
                x,
                per_instance,
                inv_std,
            },
            &[x],
        );
        if !per_instance {
            self.stats.push((
                v,
                NormStats {
                    mean: means,
                    var: vars,
                    count,
                },
            ));
        }
        v
    }

    /// Normalizes each channel over (N, H, W) with batch statistics; the
    /// statistics are retrievable through [`Graph::norm_stats`].
    pub fn batch_normalize(&mut self, x: Var, eps: f64) -> Var {
        self.normalize(x, false, T::lit(eps))
    }

    /// Normalizes each (sample, channel) plane over (H, W).
    pub fn instance_normalize(&mut self, x: Var, eps: f64) -> Var {
        self.normalize(x, true, T::lit(eps))
    }

    /// `y[n,c,..] = x[n,c,..] · scale[c] + shift[c]`.
    pub fn channel_affine(&mut self, x: Var, scale: Var, shift: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4();
        if self.value(scale).numel() != c || self.value(shift).numel() != c {
            return Err(NnError::Shape(format!("channel_affine: expected {c} channels")));
        }
        let hw = h * w;
        let xd = self.value(x).data();
        let sc = self.value(scale).data();
        let sh = self.value(shift).data();
        let mut out = vec![T::zero(); xd.len()];
        for s in 0..n {
            for ch in 0..c {
                let base = (s * c + ch) * hw;
                for i in base..base + hw {
                    out[i] = xd[i] * sc[ch] + sh[ch];
                }
            }
        }
        let value = Tensor::new(vec![n, c, h, w], out)?;
        Ok(self.push(value, Op::ChannelAffine { x, scale, shift }, &[x, scale, shift]))
    }

    fn unary(&mut self, x: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let value = self.value(x).map(f);
        self.push(value, op, &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(T::zero()), Op::Relu(x))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let s = T::lit(slope);
        self.unary(x, move |v| if v > T::zero() { v } else { v * s }, Op::LeakyRelu(x, s))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.tanh(), Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    /// `ln(1 + e^x)`, computed stably.
    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(T::zero()) + (-v.abs()).exp().ln_1p(), Op::Softplus(x))
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let (l, h) = (T::lit(lo), T::lit(hi));
        self.unary(x, move |v| v.max(l).min(h), Op::Clamp(x, l, h))
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.abs(), Op::Abs(x))
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, |v| v * v, Op::Square(x))
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let c = T::lit(c);
        self.unary(x, move |v| v + c, Op::AddScalar(x))
    }

    pub fn mul_scalar(&mut self, x: Var, c: f64) -> Var {
        let c = T::lit(c);
        self.unary(x, move |v| v * c, Op::MulScalar(x, c))
    }

    fn binary(&mut self, name: &str, a: Var, b: Var, f: impl Fn(T, T) -> T, op: Op<T>) -> Result<Var> {
        same_shape(name, self.value(a), self.value(b))?;
        let av = self.value(a);
        let bv = self.value(b);
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(av.shape().to_vec(), data)?;
        Ok(self.push(value, op, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("div", a, b, |x, y| x / y, Op::Div(a, b))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s: T = t.data().iter().copied().sum();
        let m = s / T::from_usize(t.numel()).unwrap();
        self.push(Tensor::scalar(m), Op::Mean(x), &[x])
    }

    /// Sums all but the leading axis: `[N, ...] → [N]`.
    pub fn sum_per_sample(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let n = t.shape()[0];
        let per = t.numel() / n.max(1);
        let data: Vec<T> = t.data().chunks(per.max(1)).map(|c| c.iter().copied().sum()).collect();
        let value = Tensor::new(vec![n], data).expect("n elements");
        self.push(value, Op::SumPerSample(x), &[x])
    }

    /// Concatenates NCHW tensors along the channel axis.
    pub fn concat_channels(&mut self, xs: &[Var]) -> Result<Var> {
        let (n, _, h, w) = self.value(xs[0]).dims4();
        let mut total = 0;
        for &v in xs {
            let (n2, c2, h2, w2) = self.value(v).dims4();
            if (n2, h2, w2) != (n, h, w) {
                return Err(NnError::Shape(format!(
                    "concat: {:?} vs {:?}",
                    self.value(v).shape(),
                    self.value(xs[0]).shape()
                )));
            }
            total += c2;
        }
        let hw = h * w;
        let mut out = Vec::with_capacity(n * total * hw);
        for s in 0..n {
            for &v in xs {
                let t = self.value(v);
                let c = t.shape()[1];
                out.extend_from_slice(&t.data()[s * c * hw..(s + 1) * c * hw]);
            }
        }
        let value = Tensor::new(vec![n, total, h, w], out)?;
        Ok(self.push(value, Op::Concat(xs.to_vec()), xs))
    }

    fn pool_dims(&self, x: Var) -> Result<(usize, usize, usize, usize)> {
        let (n, c, h, w) = self.value(x).dims4();
        if h % 2 != 0 || w % 2 != 0 {
            return Err(NnError::Shape(format!("2x2 pooling needs even dims, got {h}x{w}")));
        }
        Ok((n, c, h, w))
    }

    pub fn avg_pool2(&mut self, x: Var) -> Result<Var> {
        let (n, c, h, w) = self.pool_dims(x)?;
        let (ho, wo) = (h / 2, w / 2);
        let xd = self.value(x).data();
        let quarter = T::lit(0.25);
        let mut out = vec![T::zero(); n * c * ho * wo];
        for p in 0..n * c {
            let src = &xd[p * h * w..(p + 1) * h * w];
            for oy in 0..ho {
                for ox in 0..wo {
                    let i = 2 * oy * w + 2 * ox;
                    out[(p * ho + oy) * wo + ox] = (src[i] + src[i + 1] + src[i + w] + src[i + w + 1]) * quarter;
                }
            }
        }
        let value = Tensor::new(vec![n, c, ho, wo], out)?;
        Ok(self.push(value, Op::AvgPool2(x), &[x]))
    }

    pub fn max_pool2(&mut self, x: Var) -> Result<Var> {
        let (n, c, h, w) = self.pool_dims(x)?;
        let (ho, wo) = (h / 2, w / 2);
        let xd = self.value(x).data();
        let mut out = vec![T::zero(); n * c * ho * wo];
        let mut arg = vec![0usize; out.len()];
        for p in 0..n * c {
            let base = p * h * w;
            for oy in 0..ho {
                for ox in 0..wo {
                    let i = base + 2 * oy * w + 2 * ox;
                    let mut best = i;
                    for j in [i + 1, i + w, i + w + 1] {
                        if xd[j] > xd[best] {
                            best = j;
                        }
                    }
                    let o = (p * ho + oy) * wo + ox;
                    out[o] = xd[best];
                    arg[o] = best;
                }
            }
        }
        let value = Tensor::new(vec![n, c, ho, wo], out)?;
        Ok(self.push(value, Op::MaxPool2(x, arg), &[x]))
    }

    /// Reverse sweep from a single-element `loss`.
    pub fn backward(&self, loss: Var) -> Gradients<T> {
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        let seed = Tensor::full(self.value(loss).shape(), T::one());
        grads[loss.0] = Some(seed);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(gout) = grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &gout, &mut grads);
            grads[idx] = Some(gout);
        }
        Gradients { grads }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, idx: usize, gout: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let node = &self.nodes[idx];
        let out = &node.value;
        let g = gout.data();
        let mut acc = |v: Var, delta: Vec<T>| {
            let shape = self.nodes[v.0].value.shape();
            match &mut grads[v.0] {
                Some(t) => {
                    for (a, d) in t.data_mut().iter_mut().zip(delta) {
                        *a += d;
                    }
                }
                slot @ None => *slot = Some(Tensor::new(shape.to_vec(), delta).expect("grad shape")),
            }
        };
        let elementwise = |x: Var, f: &dyn Fn(T, T, T) -> T| -> Vec<T> {
            // f(grad_out, input, output)
            let xv = self.nodes[x.0].value.data();
            g.iter()
                .zip(xv)
                .zip(out.data())
                .map(|((&go, &xi), &yo)| f(go, xi, yo))
                .collect()
        };

        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, geom } => {
                let (n, c, _, _) = self.value(*x).dims4();
                let cout = self.value(*w).shape()[0];
                let per_in = c * geom.h * geom.w;
                let per_out = cout * geom.ho * geom.wo;
                let xv = self.value(*x).data();
                let wv = self.value(*w).data();
                let mut dw = self.wants(*w).then(|| vec![T::zero(); wv.len()]);
                let mut dx = self.wants(*x).then(|| vec![T::zero(); xv.len()]);
                for s in 0..n {
                    kernels::conv_backward(
                        geom,
                        cout,
                        &xv[s * per_in..(s + 1) * per_in],
                        wv,
                        &g[s * per_out..(s + 1) * per_out],
                        dw.as_deref_mut(),
                        dx.as_deref_mut().map(|d| &mut d[s * per_in..(s + 1) * per_in]),
                    );
                }
                if let Some(b) = b.filter(|b| self.wants(*b)) {
                    acc(b, channel_sums(g, n, cout, geom.ho * geom.wo));
                }
                if let Some(dw) = dw {
                    acc(*w, dw);
                }
                if let Some(dx) = dx {
                    acc(*x, dx);
                }
            }
            Op::ConvTranspose2d { x, w, b, geom } => {
                let (n, c, h, wd) = self.value(*x).dims4();
                let cout = self.value(*w).shape()[1];
                let per_in = c * h * wd;
                let per_out = cout * geom.h * geom.w;
                let xv = self.value(*x).data();
                let wv = self.value(*w).data();
                let mut dw = self.wants(*w).then(|| vec![T::zero(); wv.len()]);
                let mut dx = self.wants(*x).then(|| vec![T::zero(); xv.len()]);
                for s in 0..n {
                    kernels::conv_transpose_backward(
                        geom,
                        c,
                        &xv[s * per_in..(s + 1) * per_in],
                        wv,
                        &g[s * per_out..(s + 1) * per_out],
                        dw.as_deref_mut(),
                        dx.as_deref_mut().map(|d| &mut d[s * per_in..(s + 1) * per_in]),
                    );
                }
                if let Some(b) = b.filter(|b| self.wants(*b)) {
                    acc(b, channel_sums(g, n, cout, geom.h * geom.w));
                }
                if let Some(dw) = dw {
                    acc(*w, dw);
                }
                if let Some(dx) = dx {
                    acc(*x, dx);
                }
            }
            Op::Normalize {
                x,
                per_instance,
                inv_std,
            } => {
                let dims = out.dims4();
                let xhat = out.data();
                let mut dx = vec![T::zero(); xhat.len()];
                for (gi, &inv) in inv_std.iter().enumerate() {
                    let mut sum_g = T::zero();
                    let mut sum_gx = T::zero();
                    let mut count = 0usize;
                    for_group(dims, *per_instance, gi, |i| {
                        sum_g += g[i];
                        sum_gx += g[i] * xhat[i];
                        count += 1;
                    });
                    let m = T::from_usize(count).unwrap();
                    let (mean_g, mean_gx) = (sum_g / m, sum_gx / m);
                    for_group(dims, *per_instance, gi, |i| {
                        dx[i] = inv * (g[i] - mean_g - xhat[i] * mean_gx);
                    });
                }
                acc(*x, dx);
            }
            Op::ChannelAffine { x, scale, shift } => {
                let (n, c, h, w) = out.dims4();
                let hw = h * w;
                let xv = self.value(*x).data();
                let sc = self.value(*scale).data();
                if self.wants(*x) {
                    let mut dx = vec![T::zero(); xv.len()];
                    for s in 0..n {
                        for ch in 0..c {
                            let base = (s * c + ch) * hw;
                            for i in base..base + hw {
                                dx[i] = g[i] * sc[ch];
                            }
                        }
                    }
                    acc(*x, dx);
                }
                if self.wants(*scale) {
                    let mut ds = vec![T::zero(); c];
                    for s in 0..n {
                        for (ch, d) in ds.iter_mut().enumerate() {
                            let base = (s * c + ch) * hw;
                            for i in base..base + hw {
                                *d += g[i] * xv[i];
                            }
                        }
                    }
                    acc(*scale, ds);
                }
                if self.wants(*shift) {
                    acc(*shift, channel_sums(g, n, c, hw));
                }
            }
            Op::Relu(x) => {
                let d = elementwise(*x, &|go, xi, _| if xi > T::zero() { go } else { T::zero() });
                acc(*x, d);
            }
            Op::LeakyRelu(x, s) => {
                let s = *s;
                let d = elementwise(*x, &|go, xi, _| if xi > T::zero() { go } else { go * s });
                acc(*x, d);
            }
            Op::Tanh(x) => {
                let d = elementwise(*x, &|go, _, y| go * (T::one() - y * y));
                acc(*x, d);
            }
            Op::Sigmoid(x) => {
                let d = elementwise(*x, &|go, _, y| go * y * (T::one() - y));
                acc(*x, d);
            }
            Op::Softplus(x) => {
                let d = elementwise(*x, &|go, xi, _| go * sigmoid(xi));
                acc(*x, d);
            }
            Op::Clamp(x, lo, hi) => {
                let (lo, hi) = (*lo, *hi);
                let d = elementwise(*x, &|go, xi, _| if xi >= lo && xi <= hi { go } else { T::zero() });
                acc(*x, d);
            }
            Op::Abs(x) => {
                let d = elementwise(*x, &|go, xi, _| {
                    if xi > T::zero() {
                        go
                    } else if xi < T::zero() {
                        -go
                    } else {
                        T::zero()
                    }
                });
                acc(*x, d);
            }
            Op::Square(x) => {
                let two = T::lit(2.0);
                let d = elementwise(*x, &|go, xi, _| go * two * xi);
                acc(*x, d);
            }
            Op::AddScalar(x) => acc(*x, g.to_vec()),
            Op::MulScalar(x, c) => acc(*x, g.iter().map(|&v| v * *c).collect()),
            Op::Add(a, b) => {
                if self.wants(*a) {
                    acc(*a, g.to_vec());
                }
                if self.wants(*b) {
                    acc(*b, g.to_vec());
                }
            }
            Op::Sub(a, b) => {
                if self.wants(*a) {
                    acc(*a, g.to_vec());
                }
                if self.wants(*b) {
                    acc(*b, g.iter().map(|&v| -v).collect());
                }
            }
            Op::Mul(a, b) => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                if self.wants(*a) {
                    acc(*a, g.iter().zip(bv).map(|(&go, &y)| go * y).collect());
                }
                if self.wants(*b) {
                    acc(*b, g.iter().zip(av).map(|(&go, &x)| go * x).collect());
                }
            }
            Op::Div(a, b) => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                if self.wants(*a) {
                    acc(*a, g.iter().zip(bv).map(|(&go, &y)| go / y).collect());
                }
                if self.wants(*b) {
                    acc(
                        *b,
                        g.iter()
                            .zip(av)
                            .zip(bv)
                            .map(|((&go, &x), &y)| -go * x / (y * y))
                            .collect(),
                    );
                }
            }
            Op::Sum(x) => {
                let n = self.value(*x).numel();
                acc(*x, vec![g[0]; n]);
            }
            Op::Mean(x) => {
                let n = self.value(*x).numel();
                let v = g[0] / T::from_usize(n).unwrap();
                acc(*x, vec![v; n]);
            }
            Op::SumPerSample(x) => {
                let t = self.value(*x);
                let n = t.shape()[0];
                let per = t.numel() / n.max(1);
                let mut d = Vec::with_capacity(t.numel());
                for &gv in g {
                    d.extend(std::iter::repeat_n(gv, per));
                }
                acc(*x, d);
            }
            Op::Concat(xs) => {
                let (n, total, h, w) = out.dims4();
                let hw = h * w;
                let mut offset = 0;
                for &v in xs {
                    let c = self.value(v).shape()[1];
                    if self.wants(v) {
                        let mut d = Vec::with_capacity(n * c * hw);
                        for s in 0..n {
                            let start = (s * total + offset) * hw;
                            d.extend_from_slice(&g[start..start + c * hw]);
                        }
                        acc(v, d);
                    }
                    offset += c;
                }
            }
            Op::AvgPool2(x) => {
                let (_, _, h, w) = self.value(*x).dims4();
                let (ho, wo) = (h / 2, w / 2);
                let quarter = T::lit(0.25);
                let mut d = vec![T::zero(); self.value(*x).numel()];
                for (o, &gv) in g.iter().enumerate() {
                    let p = o / (ho * wo);
                    let r = o % (ho * wo);
                    let (oy, ox) = (r / wo, r % wo);
                    let i = p * h * w + 2 * oy * w + 2 * ox;
                    let v = gv * quarter;
                    d[i] += v;
                    d[i + 1] += v;
                    d[i + w] += v;
                    d[i + w + 1] += v;
                }
                acc(*x, d);
            }
            Op::MaxPool2(x, arg) => {
                let mut d = vec![T::zero(); self.value(*x).numel()];
                for (&gv, &i) in g.iter().zip(arg) {
                    d[i] += gv;
                }
                acc(*x, d);
            }
        }
    }
}

fn channel_sums<T: Scalar>(g: &[T], n: usize, c: usize, hw: usize) -> Vec<T> {
    let mut out = vec![T::zero(); c];
    for s in 0..n {
        for (ch, o) in out.iter_mut().enumerate() {
            let base = (s * c + ch) * hw;
            *o += g[base..base + hw].iter().copied().sum();
        }
    }
    out
}

/// Result of [`Graph::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

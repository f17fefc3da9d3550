//! Layers bound to named parameters in a [`ParamStore`].
//!
//! A layer is a plain description (name + shape). `init` writes its tensors
//! into a store; `forward` binds them into the current [`Session`].

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::graph::{Gradients, Graph, NormStats, Var};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// One forward pass over a parameter store.
pub struct Session<'a, T: Scalar> {
    pub graph: Graph<T>,
    params: &'a ParamStore<T>,
    bound: BTreeMap<String, Var>,
    frozen: Vec<String>,
    train: bool,
    batch_stats: Vec<(String, Var)>,
}

impl<'a, T: Scalar> Session<'a, T> {
    pub fn new(params: &'a ParamStore<T>, train: bool) -> Self {
        Self {
            graph: Graph::new(),
            params,
            bound: BTreeMap::new(),
            frozen: Vec::new(),
            train,
            batch_stats: Vec::new(),
        }
    }

    /// Parameters under `prefix` enter the graph as constants.
    pub fn freeze(mut self, prefix: impl Into<String>) -> Self {
        self.frozen.push(prefix.into());
        self
    }

    pub fn is_training(&self) -> bool {
        self.train
    }

    pub fn params(&self) -> &ParamStore<T> {
        self.params
    }

    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.graph.input(t)
    }

    /// Binds a named parameter, once per session.
    pub fn param(&mut self, name: &str) -> Result<Var> {
        if let Some(&v) = self.bound.get(name) {
            return Ok(v);
        }
        let t = self.params.require(name)?.clone();
        let v = if self.frozen.iter().any(|p| name.starts_with(p.as_str())) {
            self.graph.input(t)
        } else {
            self.graph.param(t)
        };
        self.bound.insert(name.to_string(), v);
        Ok(v)
    }

    fn record_batch_stats(&mut self, name: &str, v: Var) {
        self.batch_stats.push((name.to_string(), v));
    }

    /// Gradients of every bound, non-frozen parameter, keyed by name.
    pub fn gradients(&self, grads: &mut Gradients<T>) -> BTreeMap<String, Tensor<T>> {
        self.bound
            .iter()
            .filter_map(|(name, &v)| grads.take(v).map(|g| (name.clone(), g)))
            .collect()
    }

    /// Batch statistics gathered by batch-norm layers during a training pass.
    pub fn batch_stats(&self) -> Vec<(String, NormStats<T>)> {
        self.batch_stats
            .iter()
            .filter_map(|(name, v)| self.graph.norm_stats(*v).map(|s| (name.clone(), s.clone())))
            .collect()
    }
}

/// Folds recorded batch statistics into running estimates:
/// `running = (1 − momentum)·running + momentum·batch`, with the unbiased
/// batch variance.
pub fn update_running_stats<T: Scalar>(store: &mut ParamStore<T>, stats: &[(String, NormStats<T>)], momentum: f64) {
    let m = T::lit(momentum);
    let keep = T::one() - m;
    for (name, s) in stats {
        let unbias = if s.count > 1 {
            T::from_usize(s.count).unwrap() / T::from_usize(s.count - 1).unwrap()
        } else {
            T::one()
        };
        if let Some(rm) = store.get_mut(&format!("{name}.running_mean")) {
            for (r, &b) in rm.data_mut().iter_mut().zip(&s.mean) {
                *r = keep * *r + m * b;
            }
        }
        if let Some(rv) = store.get_mut(&format!("{name}.running_var")) {
            for (r, &b) in rv.data_mut().iter_mut().zip(&s.var) {
                *r = keep * *r + m * b * unbias;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// He-normal, `std = sqrt(2 / fan_in)`.
    Kaiming,
    Normal(f64),
    Zeros,
}

fn sample_weights<T: Scalar, R: Rng + ?Sized>(shape: &[usize], fan_in: usize, init: Init, rng: &mut R) -> Tensor<T> {
    let std = match init {
        Init::Kaiming => (2.0 / fan_in.max(1) as f64).sqrt(),
        Init::Normal(s) => s,
        Init::Zeros => return Tensor::zeros(shape),
    };
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| T::lit(rng.sample::<f64, _>(StandardNormal) * std))
        .collect();
    Tensor::new(shape.to_vec(), data).expect("shape product")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub name: String,
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub bias: bool,
}

impl Conv2d {
    pub fn new(name: impl Into<String>, cin: usize, cout: usize, kernel: usize, stride: usize, pad: usize) -> Self {
        Self {
            name: name.into(),
            cin,
            cout,
            kernel,
            stride,
            pad,
            bias: true,
        }
    }

    pub fn without_bias(mut self) -> Self {
        self.bias = false;
        self
    }

    pub fn weight_name(&self) -> String {
        format!("{}.weight", self.name)
    }

    pub fn init<T: Scalar, R: Rng + ?Sized>(&self, store: &mut ParamStore<T>, init: Init, rng: &mut R) {
        let shape = [self.cout, self.cin, self.kernel, self.kernel];
        let fan_in = self.cin * self.kernel * self.kernel;
        store.insert(self.weight_name(), sample_weights(&shape, fan_in, init, rng));
        if self.bias {
            store.insert(format!("{}.bias", self.name), Tensor::zeros(&[self.cout]));
        }
    }

    pub fn forward<T: Scalar>(&self, s: &mut Session<T>, x: Var) -> Result<Var> {
        let w = s.param(&self.weight_name())?;
        let b = if self.bias {
            Some(s.param(&format!("{}.bias", self.name))?)
        } else {
            None
        };
        s.graph.conv2d(x, w, b, self.stride, self.pad)
    }
}

/// Transposed convolution, weight `[cin, cout, k, k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvTranspose2d {
    pub name: String,
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvTranspose2d {
    pub fn new(name: impl Into<String>, cin: usize, cout: usize, kernel: usize, stride: usize, pad: usize) -> Self {
        Self {
            name: name.into(),
            cin,
            cout,
            kernel,
            stride,
            pad,
        }
    }

    pub fn init<T: Scalar, R: Rng + ?Sized>(&self, store: &mut ParamStore<T>, init: Init, rng: &mut R) {
        let shape = [self.cin, self.cout, self.kernel, self.kernel];
        let fan_in = self.cin * self.kernel * self.kernel / (self.stride * self.stride).max(1);
        store.insert(
            format!("{}.weight", self.name),
            sample_weights(&shape, fan_in, init, rng),
        );
        store.insert(format!("{}.bias", self.name), Tensor::zeros(&[self.cout]));
    }

    pub fn forward<T: Scalar>(&self, s: &mut Session<T>, x: Var) -> Result<Var> {
        let w = s.param(&format!("{}.weight", self.name))?;
        let b = s.param(&format!("{}.bias", self.name))?;
        s.graph.conv_transpose2d(x, w, Some(b), self.stride, self.pad)
    }
}

/// Batch normalization with learned affine and running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm2d {
    pub name: String,
    pub channels: usize,
    pub eps: f64,
}

impl BatchNorm2d {
    pub fn new(name: impl Into<String>, channels: usize) -> Self {
        Self {
            name: name.into(),
            channels,
            eps: 1e-5,
        }
    }

    pub fn init<T: Scalar>(&self, store: &mut ParamStore<T>) {
        let c = [self.channels];
        store.insert(format!("{}.weight", self.name), Tensor::full(&c, T::one()));
        store.insert(format!("{}.bias", self.name), Tensor::zeros(&c));
        store.insert(format!("{}.running_mean", self.name), Tensor::zeros(&c));
        store.insert(format!("{}.running_var", self.name), Tensor::full(&c, T::one()));
    }

    pub fn forward<T: Scalar>(&self, s: &mut Session<T>, x: Var) -> Result<Var> {
        let gamma = s.param(&format!("{}.weight", self.name))?;
        let beta = s.param(&format!("{}.bias", self.name))?;
        if s.is_training() {
            let xhat = s.graph.batch_normalize(x, self.eps);
            s.record_batch_stats(&self.name, xhat);
            s.graph.channel_affine(xhat, gamma, beta)
        } else {
            let rm = s.params().require(&format!("{}.running_mean", self.name))?;
            let rv = s.params().require(&format!("{}.running_var", self.name))?;
            let eps = T::lit(self.eps);
            let inv: Vec<T> = rv.data().iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
            let shift: Vec<T> = rm.data().iter().zip(&inv).map(|(&m, &i)| -m * i).collect();
            let c = self.channels;
            let inv = s.input(Tensor::new(vec![c], inv)?);
            let shift = s.input(Tensor::new(vec![c], shift)?);
            let xhat = s.graph.channel_affine(x, inv, shift)?;
            s.graph.channel_affine(xhat, gamma, beta)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn frozen_parameters_get_no_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::<f64>::new();
        let a = Conv2d::new("enc.a", 1, 2, 3, 1, 1);
        let b = Conv2d::new("dec.b", 2, 1, 1, 1, 0);
        a.init(&mut store, Init::Kaiming, &mut rng);
        b.init(&mut store, Init::Kaiming, &mut rng);
        let mut s = Session::new(&store, true).freeze("enc.");
        let x = s.input(Tensor::full(&[1, 1, 4, 4], 0.5));
        let h = a.forward(&mut s, x).unwrap();
        let y = b.forward(&mut s, h).unwrap();
        let l = s.graph.mean(y);
        let mut g = s.graph.backward(l);
        let grads = s.gradients(&mut g);
        assert!(grads.keys().all(|k| k.starts_with("dec.")));
        assert_eq!(grads.len(), 2);
    }

    #[test]
    fn batch_norm_eval_uses_running_statistics() {
        let mut store = ParamStore::<f64>::new();
        let bn = BatchNorm2d::new("bn", 1);
        bn.init(&mut store);
        store.get_mut("bn.running_mean").unwrap().data_mut()[0] = 2.0;
        store.get_mut("bn.running_var").unwrap().data_mut()[0] = 4.0 - 1e-5;
        let mut s = Session::new(&store, false);
        let x = s.input(Tensor::new(vec![1, 1, 1, 2], vec![2.0, 6.0]).unwrap());
        let y = bn.forward(&mut s, x).unwrap();
        let out = s.graph.value(y).data();
        assert!((out[0]).abs() < 1e-12);
        assert!((out[1] - 2.0).abs() < 1e-9);
    }

    #[test]
    fn running_stats_follow_momentum() {
        let mut store = ParamStore::<f64>::new();
        BatchNorm2d::new("bn", 1).init(&mut store);
        let stats = vec![(
            "bn".to_string(),
            NormStats {
                mean: vec![1.0],
                var: vec![3.0],
                count: 4,
            },
        )];
        update_running_stats(&mut store, &stats, 0.1);
        assert!((store.get("bn.running_mean").unwrap().item() - 0.1).abs() < 1e-12);
        // 0.9·1 + 0.1·3·4/3
        assert!((store.get("bn.running_var").unwrap().item() - 1.3).abs() < 1e-12);
    }
}

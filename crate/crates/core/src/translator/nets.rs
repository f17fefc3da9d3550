//! Residual generator and patch discriminator.
//!
//! Generator: 3×3 stem, one stride-2 downsample, residual blocks,
//! 4×4 stride-2 transposed upsample, 3×3 head. All hidden layers use
//! instance norm + ReLU. The head output goes through tanh and is added to
//! the input: `out = clamp(x + tanh(head), −1, 1)`. With a zeroed head the
//! generator is exactly the identity on [−1, 1].
//!
//! Discriminator: `depth` 4×4 stride-2 convolutions with leaky ReLU (instance
//! norm after the first), then a 3×3 convolution to one logit per patch.

use dfseg_nn::{Conv2d, ConvTranspose2d, Init, ParamStore, Scalar, Session, Var};
use rand::Rng;

use super::config::TranslatorConfig;
use crate::error::Result;

const IN_EPS: f64 = 1e-5;
const LEAK: f64 = 0.2;
const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone)]
pub struct Generator {
    stem: Conv2d,
    down: Conv2d,
    res: Vec<(Conv2d, Conv2d)>,
    up: ConvTranspose2d,
    head: Conv2d,
}

impl Generator {
    pub fn new(prefix: &str, config: &TranslatorConfig) -> Self {
        let c = config.base_channels;
        let res = (1..=config.residual_blocks)
            .map(|i| {
                (
                    Conv2d::new(format!("{prefix}.res{i}.conv1"), 2 * c, 2 * c, 3, 1, 1),
                    Conv2d::new(format!("{prefix}.res{i}.conv2"), 2 * c, 2 * c, 3, 1, 1),
                )
            })
            .collect();
        Self {
            stem: Conv2d::new(format!("{prefix}.stem"), 1, c, 3, 1, 1),
            down: Conv2d::new(format!("{prefix}.down"), c, 2 * c, 3, 2, 1),
            res,
            up: ConvTranspose2d::new(format!("{prefix}.up"), 2 * c, c, 4, 2, 1),
            head: Conv2d::new(format!("{prefix}.head"), c, 1, 3, 1, 1),
        }
    }

    pub fn init<T: Scalar, R: Rng + ?Sized>(&self, store: &mut ParamStore<T>, identity: bool, rng: &mut R) {
        let w = Init::Normal(INIT_STD);
        self.stem.init(store, w, rng);
        self.down.init(store, w, rng);
        for (a, b) in &self.res {
            a.init(store, w, rng);
            b.init(store, w, rng);
        }
        self.up.init(store, w, rng);
        self.head.init(store, if identity { Init::Zeros } else { w }, rng);
    }

    fn norm_relu<T: Scalar>(s: &mut Session<T>, x: Var) -> Var {
        let n = s.graph.instance_normalize(x, IN_EPS);
        s.graph.relu(n)
    }

    /// Maps a `[N, 1, H, W]` batch in [−1, 1] to the other domain.
    pub fn forward<T: Scalar>(&self, s: &mut Session<T>, x: Var) -> Result<Var> {
        let h = self.stem.forward(s, x)?;
        let h = Self::norm_relu(s, h);
        let h = self.down.forward(s, h)?;
        let mut h = Self::norm_relu(s, h);
        for (a, b) in &self.res {
            let r = a.forward(s, h)?;
            let r = Self::norm_relu(s, r);
            let r = b.forward(s, r)?;
            let r = s.graph.instance_normalize(r, IN_EPS);
            h = s.graph.add(h, r)?;
        }
        let h = self.up.forward(s, h)?;
        let h = Self::norm_relu(s, h);
        let d = self.head.forward(s, h)?;
        let d = s.graph.tanh(d);
        let y = s.graph.add(x, d)?;
        Ok(s.graph.clamp(y, -1.0, 1.0))
    }
}

#[derive(Debug, Clone)]
pub struct Discriminator {
    convs: Vec<Conv2d>,
    out: Conv2d,
}

impl Discriminator {
    pub fn new(prefix: &str, config: &TranslatorConfig) -> Self {
        let mut convs = Vec::new();
        let mut cin = 1;
        let mut c = config.base_channels;
        for i in 1..=config.discriminator.depth {
            convs.push(Conv2d::new(format!("{prefix}.conv{i}"), cin, c, 4, 2, 1));
            cin = c;
            c *= 2;
        }
        Self {
            convs,
            out: Conv2d::new(format!("{prefix}.out"), cin, 1, 3, 1, 1),
        }
    }

    pub fn init<T: Scalar, R: Rng + ?Sized>(&self, store: &mut ParamStore<T>, rng: &mut R) {
        for c in &self.convs {
            c.init(store, Init::Normal(INIT_STD), rng);
        }
        self.out.init(store, Init::Normal(INIT_STD), rng);
    }

    /// One logit per patch, `[N, 1, H / 2^depth, W / 2^depth]`.
    pub fn forward<T: Scalar>(&self, s: &mut Session<T>, x: Var) -> Result<Var> {
        let mut h = x;
        for (i, c) in self.convs.iter().enumerate() {
            h = c.forward(s, h)?;
            if i > 0 {
                h = s.graph.instance_normalize(h, IN_EPS);
            }
            h = s.graph.leaky_relu(h, LEAK);
        }
        Ok(self.out.forward(s, h)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use dfseg_nn::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg() -> TranslatorConfig {
        TranslatorConfig {
            base_channels: 4,
            residual_blocks: 1,
            image_size: 16,
            ..TranslatorConfig::default()
        }
    }

    #[test]
    fn shapes() {
        let c = cfg();
        let g = Generator::new("G", &c);
        let d = Discriminator::new("D", &c);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::<f32>::new();
        g.init(&mut store, false, &mut rng);
        d.init(&mut store, &mut rng);
        let mut s = Session::new(&store, false);
        let x = s.input(Tensor::full(&[2, 1, 16, 16], 0.25));
        let y = g.forward(&mut s, x).unwrap();
        assert_eq!(s.graph.value(y).shape(), &[2, 1, 16, 16]);
        let p = d.forward(&mut s, y).unwrap();
        assert_eq!(s.graph.value(p).shape(), &[2, 1, 2, 2]);
    }

    #[test]
    fn zero_head_is_identity() {
        let c = cfg();
        let g = Generator::new("G", &c);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::<f64>::new();
        g.init(&mut store, true, &mut rng);
        let mut s = Session::new(&store, false);
        let data: Vec<f64> = (0..256).map(|i| (i as f64 / 255.0) * 2.0 - 1.0).collect();
        let x = s.input(Tensor::new(vec![1, 1, 16, 16], data.clone()).unwrap());
        let y = g.forward(&mut s, x).unwrap();
        assert_eq!(s.graph.value(y).data(), &data[..]);
    }
}

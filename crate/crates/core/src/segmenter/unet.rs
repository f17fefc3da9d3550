//! U-Net with a densely connected encoder.
//!
//! Encoder: a full-resolution stem, then per stage a transition
//! (BN-ReLU-1×1 conv, 2×2 average pool) followed by a dense block whose
//! layers (BN-ReLU-3×3 conv) each append `growth_rate` channels. Every stage
//! output is a skip connection; the last one is the bottleneck. Decoder:
//! per stage a stride-2 transposed conv, concatenation with the matching
//! skip, and two 3×3 conv-BN-ReLU layers. A 1×1 head and a sigmoid give the
//! lesion probability.

use dfseg_nn::{BatchNorm2d, Conv2d, ConvTranspose2d, Init, ParamStore, Scalar, Session, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::UNetConfig;
use crate::error::Result;

#[derive(Debug, Clone)]
struct DenseLayer {
    bn: BatchNorm2d,
    conv: Conv2d,
}

#[derive(Debug, Clone)]
struct Stage {
    trans_bn: BatchNorm2d,
    trans_conv: Conv2d,
    layers: Vec<DenseLayer>,
}

#[derive(Debug, Clone)]
struct DecoderStage {
    up: ConvTranspose2d,
    conv1: Conv2d,
    bn1: BatchNorm2d,
    conv2: Conv2d,
    bn2: BatchNorm2d,
}

#[derive(Debug, Clone)]
pub struct UNet {
    stem_conv: Conv2d,
    stem_bn: BatchNorm2d,
    stages: Vec<Stage>,
    decoder: Vec<DecoderStage>,
    head: Conv2d,
    /// Channel count of each skip, stem first.
    skip_channels: Vec<usize>,
}

/// Forward-pass nodes of interest.
pub struct UNetOutput {
    pub probs: Var,
    pub logits: Var,
    /// Stem output then each encoder stage output.
    pub features: Vec<Var>,
}

impl UNet {
    pub fn new(config: &UNetConfig) -> Self {
        let enc = &config.encoder;
        let c0 = enc.stem_channels;
        let stem_conv = Conv2d::new("enc.stem.conv", 1, c0, 3, 1, 1).without_bias();
        let stem_bn = BatchNorm2d::new("enc.stem.bn", c0);
        let mut skip_channels = vec![c0];
        let mut c = c0;
        let mut stages = Vec::new();
        for (i, &n) in enc.blocks.iter().enumerate() {
            let p = format!("enc.s{}", i + 1);
            // the first transition keeps the stem width, later ones halve
            let ct = if i == 0 { c } else { (c / 2).max(1) };
            let trans_bn = BatchNorm2d::new(format!("{p}.trans.bn"), c);
            let trans_conv = Conv2d::new(format!("{p}.trans.conv"), c, ct, 1, 1, 0).without_bias();
            c = ct;
            let mut layers = Vec::new();
            for j in 0..n {
                layers.push(DenseLayer {
                    bn: BatchNorm2d::new(format!("{p}.l{}.bn", j + 1), c),
                    conv: Conv2d::new(format!("{p}.l{}.conv", j + 1), c, enc.growth_rate, 3, 1, 1).without_bias(),
                });
                c += enc.growth_rate;
            }
            stages.push(Stage {
                trans_bn,
                trans_conv,
                layers,
            });
            skip_channels.push(c);
        }
        let mut decoder = Vec::new();
        let s = enc.blocks.len();
        for (k, &d) in config.decoder_channels.iter().enumerate() {
            let p = format!("dec.s{}", k + 1);
            let skip = skip_channels[s - 1 - k];
            decoder.push(DecoderStage {
                up: ConvTranspose2d::new(format!("{p}.up"), c, d, 2, 2, 0),
                conv1: Conv2d::new(format!("{p}.conv1"), d + skip, d, 3, 1, 1).without_bias(),
                bn1: BatchNorm2d::new(format!("{p}.bn1"), d),
                conv2: Conv2d::new(format!("{p}.conv2"), d, d, 3, 1, 1).without_bias(),
                bn2: BatchNorm2d::new(format!("{p}.bn2"), d),
            });
            c = d;
        }
        let head = Conv2d::new("head", c, 1, 1, 1, 0);
        Self {
            stem_conv,
            stem_bn,
            stages,
            decoder,
            head,
            skip_channels,
        }
    }

    pub fn skip_channels(&self) -> &[usize] {
        &self.skip_channels
    }

    pub fn init<T: Scalar>(&self, seed: u64) -> ParamStore<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        self.stem_conv.init(&mut store, Init::Kaiming, &mut rng);
        self.stem_bn.init(&mut store);
        for st in &self.stages {
            st.trans_bn.init(&mut store);
            st.trans_conv.init(&mut store, Init::Kaiming, &mut rng);
            for l in &st.layers {
                l.bn.init(&mut store);
                l.conv.init(&mut store, Init::Kaiming, &mut rng);
            }
        }
        for d in &self.decoder {
            d.up.init(&mut store, Init::Kaiming, &mut rng);
            d.conv1.init(&mut store, Init::Kaiming, &mut rng);
            d.bn1.init(&mut store);
            d.conv2.init(&mut store, Init::Kaiming, &mut rng);
            d.bn2.init(&mut store);
        }
        self.head.init(&mut store, Init::Kaiming, &mut rng);
        store
    }

    pub fn forward<T: Scalar>(&self, s: &mut Session<T>, x: Var) -> Result<UNetOutput> {
        let h = self.stem_conv.forward(s, x)?;
        let h = self.stem_bn.forward(s, h)?;
        let mut h = s.graph.relu(h);
        let mut features = vec![h];
        for st in &self.stages {
            let t = st.trans_bn.forward(s, h)?;
            let t = s.graph.relu(t);
            let t = st.trans_conv.forward(s, t)?;
            h = s.graph.avg_pool2(t)?;
            for l in &st.layers {
                let y = l.bn.forward(s, h)?;
                let y = s.graph.relu(y);
                let y = l.conv.forward(s, y)?;
                h = s.graph.concat_channels(&[h, y])?;
            }
            features.push(h);
        }
        let n = features.len();
        for (k, d) in self.decoder.iter().enumerate() {
            let u = d.up.forward(s, h)?;
            let cat = s.graph.concat_channels(&[u, features[n - 2 - k]])?;
            let y = d.conv1.forward(s, cat)?;
            let y = d.bn1.forward(s, y)?;
            let y = s.graph.relu(y);
            let y = d.conv2.forward(s, y)?;
            let y = d.bn2.forward(s, y)?;
            h = s.graph.relu(y);
        }
        let logits = self.head.forward(s, h)?;
        let probs = s.graph.sigmoid(logits);
        Ok(UNetOutput {
            probs,
            logits,
            features,
        })
    }
}

use std::path::Path;

use dfseg_nn::{Adam, ParamStore, Scalar, Session, Tensor, Var};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::TranslatorConfig;
use super::loss::{adversarial_loss_var, l1_var, Side};
use super::nets::{Discriminator, Generator};
use crate::batch::{stack_images, unstack};
use crate::checkpoint::{load_checkpoint, load_params, save_checkpoint, Sidecar};
use crate::error::{Error, Result};
use crate::Image;

pub const CHECKPOINT_KIND: &str = "cyclegan";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    #[serde(rename = "a2b")]
    AToB,
    #[serde(rename = "b2a")]
    BToA,
}

impl Direction {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "a2b" | "a->b" | "ab" => Some(Direction::AToB),
            "b2a" | "b->a" | "ba" => Some(Direction::BToA),
            _ => None,
        }
    }
}

/// Per-epoch means of each loss term. `cyc` is the unweighted cycle loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranslatorEpoch {
    pub epoch: usize,
    #[serde(rename = "adv_G")]
    pub adv_g: f64,
    #[serde(rename = "adv_F")]
    pub adv_f: f64,
    #[serde(rename = "adv_D_A")]
    pub adv_d_a: f64,
    #[serde(rename = "adv_D_B")]
    pub adv_d_b: f64,
    pub cyc: f64,
}

/// Both generators and both discriminators in one store, under the
/// prefixes `G.` (A→B), `F.` (B→A), `D_A.` and `D_B.`.
#[derive(Debug, Clone)]
pub struct CycleGanBundle<T: Scalar> {
    pub params: ParamStore<T>,
    pub config: TranslatorConfig,
    pub trained_epochs: usize,
    pub history: Vec<TranslatorEpoch>,
    g: Generator,
    f: Generator,
    d_a: Discriminator,
    d_b: Discriminator,
}

/// Terms of the generator objective for one batch.
pub struct GeneratorTerms {
    pub total: Var,
    pub adv_g: Var,
    pub adv_f: Var,
    pub cyc: Var,
    pub fake_a: Var,
    pub fake_b: Var,
}

/// Builds the four networks, seeded by `config.seed`. A pretrained store
/// (checkpoint directory or parameter file) must name every parameter;
/// 3-channel stems, heads and first discriminator layers are mean-folded.
pub fn build_cyclegan<T: Scalar>(config: &TranslatorConfig, pretrained: Option<&Path>) -> Result<CycleGanBundle<T>> {
    config.validate()?;
    let g = Generator::new("G", config);
    let f = Generator::new("F", config);
    let d_a = Discriminator::new("D_A", config);
    let d_b = Discriminator::new("D_B", config);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = ParamStore::new();
    g.init(&mut params, config.identity_init, &mut rng);
    f.init(&mut params, config.identity_init, &mut rng);
    d_a.init(&mut params, &mut rng);
    d_b.init(&mut params, &mut rng);
    if let Some(path) = pretrained {
        let source = load_params::<T>(path)?;
        params
            .load_compatible(&source, "")
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    }
    Ok(CycleGanBundle {
        params,
        config: config.clone(),
        trained_epochs: 0,
        history: Vec::new(),
        g,
        f,
        d_a,
        d_b,
    })
}

fn to_internal<T: Scalar>(t: &Tensor<T>) -> Tensor<T> {
    let two = T::lit(2.0);
    t.map(|v| v * two - T::one())
}

fn item<T: Scalar>(s: &Session<T>, v: Var) -> f64 {
    s.graph.value(v).item().to_f64().unwrap_or(f64::NAN)
}

impl<T: Scalar> CycleGanBundle<T> {
    fn generator(&self, d: Direction) -> &Generator {
        match d {
            Direction::AToB => &self.g,
            Direction::BToA => &self.f,
        }
    }

    /// Parameters of one network: `"G"`, `"F"`, `"D_A"` or `"D_B"`.
    pub fn network_params(&self, net: &str) -> ParamStore<T> {
        self.params.subset(&format!("{net}."))
    }

    /// Generator objective on batches `a`, `b` already in [−1, 1]:
    /// adversarial terms + `lambda_cyc` × cycle loss (+ identity term when
    /// enabled). Discriminators should be frozen in `s`.
    pub fn generator_objective(&self, s: &mut Session<T>, a: Var, b: Var) -> Result<GeneratorTerms> {
        let c = &self.config;
        let fake_b = self.g.forward(s, a)?;
        let rec_a = self.f.forward(s, fake_b)?;
        let fake_a = self.f.forward(s, b)?;
        let rec_b = self.g.forward(s, fake_a)?;
        let pb = self.d_b.forward(s, fake_b)?;
        let pa = self.d_a.forward(s, fake_a)?;
        let adv_g = adversarial_loss_var(&mut s.graph, None, pb, Side::Generator, c.adversarial_variant)?;
        let adv_f = adversarial_loss_var(&mut s.graph, None, pa, Side::Generator, c.adversarial_variant)?;
        let ca = l1_var(&mut s.graph, rec_a, a)?;
        let cb = l1_var(&mut s.graph, rec_b, b)?;
        let cyc = s.graph.add(ca, cb)?;
        let weighted = s.graph.mul_scalar(cyc, c.lambda_cyc);
        let adv = s.graph.add(adv_g, adv_f)?;
        let mut total = s.graph.add(adv, weighted)?;
        if c.identity_loss {
            let ib = self.g.forward(s, b)?;
            let ia = self.f.forward(s, a)?;
            let lb = l1_var(&mut s.graph, ib, b)?;
            let la = l1_var(&mut s.graph, ia, a)?;
            let id = s.graph.add(la, lb)?;
            let id = s.graph.mul_scalar(id, c.lambda_identity);
            total = s.graph.add(total, id)?;
        }
        Ok(GeneratorTerms {
            total,
            adv_g,
            adv_f,
            cyc,
            fake_a,
            fake_b,
        })
    }

    /// Translates `[N, 1, H, W]` images in [0, 1]; output in [0, 1].
    pub fn translate_batch(&self, images: &[&Image<T>], direction: Direction) -> Result<Vec<Image<T>>> {
        let n = self.config.image_size;
        for im in images {
            if im.dim() != (n, n) {
                return Err(Error::validation(format!(
                    "image is {}×{} but the translator expects {n}×{n}",
                    im.dim().0,
                    im.dim().1
                )));
            }
        }
        let x = to_internal(&stack_images(images)?);
        let mut s = Session::new(&self.params, false);
        let x = s.input(x);
        let y = self.generator(direction).forward(&mut s, x)?;
        let half = T::lit(0.5);
        let out = s
            .graph
            .value(y)
            .map(|v| ((v + T::one()) * half).max(T::zero()).min(T::one()));
        Ok(unstack(&out))
    }

    pub fn translate(&self, image: &Image<T>, direction: Direction) -> Result<Image<T>> {
        Ok(self.translate_batch(&[image], direction)?.pop().expect("one image"))
    }

    pub fn save(&self, dir: &Path) -> Result<Sidecar> {
        let sidecar = Sidecar {
            kind: CHECKPOINT_KIND.into(),
            dtype: String::new(),
            seed: self.config.seed,
            trained_epochs: self.trained_epochs,
            content_hash: String::new(),
            config: serde_json::to_value(&self.config).expect("config serializes"),
            history: serde_json::to_value(&self.history).expect("history serializes"),
        };
        save_checkpoint(dir, sidecar, &self.params)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let (sidecar, stored) = load_checkpoint::<T>(dir, CHECKPOINT_KIND)?;
        let config: TranslatorConfig = serde_json::from_value(sidecar.config)
            .map_err(|e| Error::Checkpoint(format!("{}: bad config: {e}", dir.display())))?;
        let mut bundle = build_cyclegan::<T>(&config, None)?;
        bundle
            .params
            .load_compatible(&stored, "")
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", dir.display())))?;
        bundle.trained_epochs = sidecar.trained_epochs;
        bundle.history = serde_json::from_value(sidecar.history).unwrap_or_default();
        Ok(bundle)
    }
}

fn check_domain<T: Scalar>(name: &str, images: &[Image<T>], size: usize) -> Result<()> {
    if images.is_empty() {
        return Err(Error::EmptyDataset(format!("translator domain {name}")));
    }
    if let Some(bad) = images.iter().find(|im| im.dim() != (size, size)) {
        return Err(Error::validation(format!(
            "domain {name} holds a {:?} image, expected {size}×{size}",
            bad.dim()
        )));
    }
    Ok(())
}

fn diverged(epoch: usize, what: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::Diverged {
            epoch,
            detail: format!("{what} loss is {v}"),
        })
    }
}

/// Alternating updates: one generator step (discriminators frozen), then
/// one step of each discriminator on the detached fakes with the
/// discriminator loss halved. Images are in [0, 1].
///
/// Each epoch visits `max(|A|, |B|)` pairs; the smaller domain is cycled.
pub fn train_translator<T: Scalar>(
    mut bundle: CycleGanBundle<T>,
    domain_a: &[Image<T>],
    domain_b: &[Image<T>],
    config: &TranslatorConfig,
) -> Result<(CycleGanBundle<T>, Vec<TranslatorEpoch>)> {
    config.validate()?;
    if config.epochs == 0 {
        return Ok((bundle, Vec::new()));
    }
    let size = bundle.config.image_size;
    check_domain("A", domain_a, size)?;
    check_domain("B", domain_b, size)?;
    let b = &bundle.config;
    if (b.base_channels, b.residual_blocks, &b.discriminator, b.image_size)
        != (
            config.base_channels,
            config.residual_blocks,
            &config.discriminator,
            config.image_size,
        )
    {
        return Err(Error::validation(
            "training config describes a different architecture than the bundle",
        ));
    }
    let c = config.clone();
    bundle.config = c.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
    let mut adam_gen = Adam::with_betas(c.lr, 0.5, 0.999);
    let mut adam_disc = Adam::with_betas(c.lr, 0.5, 0.999);
    let steps = domain_a.len().max(domain_b.len()).div_ceil(c.batch);
    let mut order_a: Vec<usize> = (0..domain_a.len()).collect();
    let mut order_b: Vec<usize> = (0..domain_b.len()).collect();
    let mut history = Vec::with_capacity(c.epochs);
    for _ in 0..c.epochs {
        let epoch = bundle.trained_epochs + 1;
        order_a.shuffle(&mut rng);
        order_b.shuffle(&mut rng);
        let mut sums = [0.0f64; 5];
        for step in 0..steps {
            let pick = |order: &[usize], data: &[Image<T>]| -> Result<Tensor<T>> {
                let imgs: Vec<&Image<T>> = (0..c.batch)
                    .map(|k| &data[order[(step * c.batch + k) % order.len()]])
                    .collect();
                Ok(to_internal(&stack_images(&imgs)?))
            };
            let ta = pick(&order_a, domain_a)?;
            let tb = pick(&order_b, domain_b)?;

            let (gen_grads, fake_a, fake_b, terms) = {
                let mut s = Session::new(&bundle.params, true).freeze("D_A.").freeze("D_B.");
                let a = s.input(ta.clone());
                let b = s.input(tb.clone());
                let t = bundle.generator_objective(&mut s, a, b)?;
                let vals = [item(&s, t.adv_g), item(&s, t.adv_f), item(&s, t.cyc), item(&s, t.total)];
                diverged(epoch, "generator", vals[3])?;
                let fa = s.graph.value(t.fake_a).clone();
                let fb = s.graph.value(t.fake_b).clone();
                let mut g = s.graph.backward(t.total);
                (s.gradients(&mut g), fa, fb, vals)
            };
            adam_gen.step(&mut bundle.params, &gen_grads);

            let (disc_grads, da, db) = {
                let mut s = Session::new(&bundle.params, true).freeze("G.").freeze("F.");
                let a = s.input(ta);
                let b = s.input(tb);
                let fa = s.input(fake_a);
                let fb = s.input(fake_b);
                let ra = bundle.d_a.forward(&mut s, a)?;
                let pa = bundle.d_a.forward(&mut s, fa)?;
                let rb = bundle.d_b.forward(&mut s, b)?;
                let pb = bundle.d_b.forward(&mut s, fb)?;
                let la = adversarial_loss_var(&mut s.graph, Some(ra), pa, Side::Discriminator, c.adversarial_variant)?;
                let lb = adversarial_loss_var(&mut s.graph, Some(rb), pb, Side::Discriminator, c.adversarial_variant)?;
                let (da, db) = (item(&s, la), item(&s, lb));
                diverged(epoch, "discriminator", da + db)?;
                let sum = s.graph.add(la, lb)?;
                let half = s.graph.mul_scalar(sum, 0.5);
                let mut g = s.graph.backward(half);
                (s.gradients(&mut g), da, db)
            };
            adam_disc.step(&mut bundle.params, &disc_grads);

            for (acc, v) in sums.iter_mut().zip([terms[0], terms[1], da, db, terms[2]]) {
                *acc += v;
            }
        }
        let n = steps as f64;
        let rec = TranslatorEpoch {
            epoch,
            adv_g: sums[0] / n,
            adv_f: sums[1] / n,
            adv_d_a: sums[2] / n,
            adv_d_b: sums[3] / n,
            cyc: sums[4] / n,
        };
        log::info!(
            "cyclegan epoch {epoch}: adv_G {:.4} adv_F {:.4} adv_D_A {:.4} adv_D_B {:.4} cyc {:.4}",
            rec.adv_g,
            rec.adv_f,
            rec.adv_d_a,
            rec.adv_d_b,
            rec.cyc
        );
        bundle.trained_epochs = epoch;
        bundle.history.push(rec.clone());
        history.push(rec);
    }
    Ok((bundle, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::translator::config::DiscriminatorConfig;
    use dfseg_nn::fold_channels;
    use ndarray::Array2;

    fn toy() -> TranslatorConfig {
        TranslatorConfig {
            base_channels: 2,
            residual_blocks: 1,
            discriminator: DiscriminatorConfig { depth: 1 },
            image_size: 4,
            seed: 5,
            ..TranslatorConfig::default()
        }
    }

    fn img(seed: usize, n: usize) -> Image<f64> {
        Array2::from_shape_fn((n, n), |(y, x)| (((y * 7 + x * 3 + seed * 5) % 11) as f64) / 10.0)
    }

    #[test]
    fn generator_objective_gradient_matches_finite_differences() {
        let cfg = toy();
        let bundle = build_cyclegan::<f64>(&cfg, None).unwrap();
        let a = to_internal(&stack_images(&[&img(1, 4)]).unwrap());
        let b = to_internal(&stack_images(&[&img(2, 4)]).unwrap());
        let objective = |params: &ParamStore<f64>| {
            let probe = CycleGanBundle {
                params: params.clone(),
                ..bundle.clone()
            };
            let mut s = Session::new(&probe.params, true).freeze("D_A.").freeze("D_B.");
            let (va, vb) = (s.input(a.clone()), s.input(b.clone()));
            let t = probe.generator_objective(&mut s, va, vb).unwrap();
            s.graph.value(t.total).item()
        };
        let mut s = Session::new(&bundle.params, true).freeze("D_A.").freeze("D_B.");
        let (va, vb) = (s.input(a.clone()), s.input(b.clone()));
        let t = bundle.generator_objective(&mut s, va, vb).unwrap();
        let mut g = s.graph.backward(t.total);
        let grads = s.gradients(&mut g);
        assert!(grads.keys().all(|k| k.starts_with("G.") || k.starts_with("F.")));
        let h = 1e-6;
        let mut checked = 0;
        for name in [
            "G.stem.weight",
            "G.res1.conv1.weight",
            "G.up.weight",
            "F.down.weight",
            "F.head.weight",
            "F.head.bias",
        ] {
            let analytic = &grads[name];
            for i in (0..analytic.numel()).step_by(3).take(4) {
                let mut plus = bundle.params.clone();
                plus.get_mut(name).unwrap().data_mut()[i] += h;
                let mut minus = bundle.params.clone();
                minus.get_mut(name).unwrap().data_mut()[i] -= h;
                let numeric = (objective(&plus) - objective(&minus)) / (2.0 * h);
                let a = analytic.data()[i];
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-4);
                assert!(rel < 1e-3, "{name}[{i}]: analytic {a} numeric {numeric}");
                checked += 1;
            }
        }
        assert!(checked >= 12);
    }

    #[test]
    fn identity_init_translates_to_input() {
        let cfg = TranslatorConfig {
            identity_init: true,
            image_size: 16,
            base_channels: 4,
            ..toy()
        };
        let bundle = build_cyclegan::<f64>(&cfg, None).unwrap();
        let x = img(3, 16);
        let y = bundle.translate(&x, Direction::AToB).unwrap();
        assert!(x.iter().zip(y.iter()).all(|(p, q)| (p - q).abs() < 1e-5));
    }

    #[test]
    fn epochs_zero_returns_bundle_unchanged() {
        let cfg = TranslatorConfig { epochs: 0, ..toy() };
        let bundle = build_cyclegan::<f64>(&cfg, None).unwrap();
        let before = bundle.params.to_bytes();
        let (after, hist) = train_translator(bundle, &[], &[], &cfg).unwrap();
        assert!(hist.is_empty());
        assert_eq!(after.params.to_bytes(), before);
    }

    #[test]
    fn empty_domain_errors() {
        let cfg = TranslatorConfig { epochs: 1, ..toy() };
        let bundle = build_cyclegan::<f64>(&cfg, None).unwrap();
        assert!(matches!(
            train_translator(bundle, &[], &[img(0, 4)], &cfg),
            Err(Error::EmptyDataset(_))
        ));
    }

    #[test]
    fn three_channel_pretrained_stem_is_mean_folded() {
        let cfg = toy();
        let reference = build_cyclegan::<f64>(
            &TranslatorConfig {
                seed: 99,
                ..cfg.clone()
            },
            None,
        )
        .unwrap();
        let mut pretrained = reference.params.clone();
        let w = pretrained.get("G.stem.weight").unwrap().clone();
        let (co, _, k, _) = w.dims4();
        let wide: Vec<f64> = (0..co * 3 * k * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let wide = Tensor::new(vec![co, 3, k, k], wide).unwrap();
        pretrained.insert("G.stem.weight", wide.clone());
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("pre.bin");
        pretrained.save(&p).unwrap();
        let bundle = build_cyclegan::<f64>(&cfg, Some(&p)).unwrap();
        let folded = bundle.params.get("G.stem.weight").unwrap();
        let want = fold_channels(&wide, &[co, 1, k, k]).unwrap();
        assert_eq!(folded, &want);
        for i in 0..co * k * k {
            let (o, r) = (i / (k * k), i % (k * k));
            let mean = (0..3).map(|c| wide.data()[(o * 3 + c) * k * k + r]).sum::<f64>() / 3.0;
            assert!((folded.data()[i] - mean).abs() < 1e-15);
        }
        assert_eq!(bundle.params.get("F.up.weight"), reference.params.get("F.up.weight"));
    }

    #[test]
    fn mismatched_pretrained_names_the_parameter() {
        let cfg = toy();
        let mut other = build_cyclegan::<f64>(&cfg, None).unwrap().params;
        other.insert("G.down.weight", Tensor::zeros(&[5, 5, 3, 3]));
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.bin");
        other.save(&p).unwrap();
        let err = build_cyclegan::<f64>(&cfg, Some(&p)).unwrap_err();
        assert!(err.to_string().contains("G.down.weight"), "{err}");
        assert!(err.is_validation());
    }
}

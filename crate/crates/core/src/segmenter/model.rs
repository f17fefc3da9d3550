use std::path::Path;

use dfseg_nn::{update_running_stats, Adam, ParamStore, Scalar, Session, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{TrainConfig, UNetConfig};
use super::loss::{dice_loss, dice_loss_var};
use super::unet::UNet;
use crate::batch::{stack_images, stack_masks, unstack};
use crate::checkpoint::{load_checkpoint, load_params, save_checkpoint, Sidecar};
use crate::datakit::SliceSample;
use crate::error::{Error, Result};
use crate::evalkit::dsc;
use crate::{Image, Mask};

pub const CHECKPOINT_KIND: &str = "unet";
const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_dsc: f64,
}

#[derive(Debug, Clone)]
pub struct BestSnapshot<T: Scalar> {
    pub epoch: usize,
    pub val_dsc: f64,
    pub params: ParamStore<T>,
}

/// U-Net parameters with their configuration and training history.
#[derive(Debug, Clone)]
pub struct SegModelBundle<T: Scalar> {
    pub params: ParamStore<T>,
    pub config: UNetConfig,
    pub history: Vec<EpochStats>,
    /// Parameters from the epoch with the highest validation DSC.
    pub best: Option<BestSnapshot<T>>,
    net: UNet,
}

pub fn build_unet<T: Scalar>(config: &UNetConfig) -> Result<SegModelBundle<T>> {
    config.validate()?;
    let net = UNet::new(config);
    let mut params = net.init::<T>(config.seed);
    if let Some(path) = &config.pretrained_encoder {
        let source = load_params::<T>(path)?;
        params
            .load_compatible(&source, "enc.")
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    }
    Ok(SegModelBundle {
        params,
        config: config.clone(),
        history: Vec::new(),
        best: None,
        net,
    })
}

impl<T: Scalar> SegModelBundle<T> {
    fn check_size(&self, dim: (usize, usize)) -> Result<()> {
        let n = self.config.input_size;
        if dim != (n, n) {
            return Err(Error::validation(format!(
                "image is {}×{} but the model expects {n}×{n}",
                dim.0, dim.1
            )));
        }
        Ok(())
    }

    /// Inference-mode probabilities for an `[N, 1, H, W]` batch. Any size
    /// divisible by `2^stages` is accepted.
    pub fn forward(&self, x: Tensor<T>) -> Result<Tensor<T>> {
        let mut s = Session::new(&self.params, false);
        let x = s.input(x);
        let out = self.net.forward(&mut s, x)?;
        Ok(s.graph.value(out.probs).clone())
    }

    pub fn predict_proba(&self, images: &[&Image<T>]) -> Result<Vec<Image<T>>> {
        for im in images {
            self.check_size(im.dim())?;
        }
        Ok(unstack(&self.forward(stack_images(images)?)?))
    }

    /// `probability ≥ threshold`.
    pub fn predict_mask(&self, image: &Image<T>, threshold: f64) -> Result<Mask> {
        let p = self.predict_proba(&[image])?.pop().expect("one image");
        let t = T::lit(threshold);
        Ok(p.mapv(|v| v >= t))
    }

    pub fn predict_masks(&self, images: &[&Image<T>], threshold: f64, batch: usize) -> Result<Vec<Mask>> {
        let t = T::lit(threshold);
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(batch.max(1)) {
            out.extend(self.predict_proba(chunk)?.into_iter().map(|p| p.mapv(|v| v >= t)));
        }
        Ok(out)
    }

    /// Copy of this bundle carrying the best-epoch parameters, if any.
    pub fn best_model(&self) -> Option<SegModelBundle<T>> {
        self.best.as_ref().map(|b| SegModelBundle {
            params: b.params.clone(),
            config: self.config.clone(),
            history: self.history.clone(),
            best: None,
            net: self.net.clone(),
        })
    }

    pub fn save(&self, dir: &Path, seed: u64) -> Result<Sidecar> {
        let sidecar = Sidecar {
            kind: CHECKPOINT_KIND.into(),
            dtype: String::new(),
            seed,
            trained_epochs: self.history.len(),
            content_hash: String::new(),
            config: serde_json::to_value(&self.config).expect("config serializes"),
            history: serde_json::to_value(&self.history).expect("history serializes"),
        };
        save_checkpoint(dir, sidecar, &self.params)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let (sidecar, stored) = load_checkpoint::<T>(dir, CHECKPOINT_KIND)?;
        let config: UNetConfig = serde_json::from_value(sidecar.config)
            .map_err(|e| Error::Checkpoint(format!("{}: bad config: {e}", dir.display())))?;
        let config = UNetConfig {
            pretrained_encoder: None,
            ..config
        };
        let mut bundle = build_unet::<T>(&config)?;
        bundle
            .params
            .load_compatible(&stored, "")
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", dir.display())))?;
        bundle.history = serde_json::from_value(sidecar.history).unwrap_or_default();
        Ok(bundle)
    }
}

fn check_samples<T: Scalar>(what: &str, samples: &[SliceSample<T>], size: usize) -> Result<()> {
    for s in samples {
        if s.image.dim() != (size, size) {
            return Err(Error::validation(format!(
                "{what} sample `{}` is {:?}, expected {size}×{size}",
                s.id,
                s.image.dim()
            )));
        }
    }
    Ok(())
}

/// Mean Dice loss and mean DSC of thresholded predictions.
pub fn validate_model<T: Scalar>(
    bundle: &SegModelBundle<T>,
    val: &[SliceSample<T>],
    epsilon: f64,
    batch: usize,
) -> Result<(f64, f64)> {
    let (mut loss, mut score) = (0.0, 0.0);
    let t = T::lit(bundle.config.out_threshold);
    for chunk in val.chunks(batch.max(1)) {
        let images: Vec<&Image<T>> = chunk.iter().map(|s| &s.image).collect();
        for (p, s) in bundle.predict_proba(&images)?.iter().zip(chunk) {
            let mask = s.mask_or_empty();
            let target = mask.mapv(|b| if b { T::one() } else { T::zero() });
            loss += dice_loss(p, &target, epsilon)?.to_f64().unwrap_or(f64::NAN);
            score += dsc::<f64>(&mask, &p.mapv(|v| v >= t))?;
        }
    }
    let n = val.len().max(1) as f64;
    Ok((loss / n, score / n))
}

/// Adam on the Dice loss. Unmasked samples train against an
/// all-background mask. The returned bundle holds the final parameters and
/// a snapshot of the best validation epoch.
pub fn train_segmenter<T: Scalar>(
    mut bundle: SegModelBundle<T>,
    train: &[SliceSample<T>],
    val: &[SliceSample<T>],
    tc: &TrainConfig,
) -> Result<(SegModelBundle<T>, Vec<EpochStats>)> {
    tc.validate()?;
    if tc.epochs == 0 {
        return Ok((bundle, Vec::new()));
    }
    if train.is_empty() {
        return Err(Error::EmptyDataset("segmenter training set".into()));
    }
    if val.is_empty() {
        return Err(Error::EmptyDataset("segmenter validation set".into()));
    }
    let size = bundle.config.input_size;
    check_samples("training", train, size)?;
    check_samples("validation", val, size)?;
    let masks: Vec<Mask> = train.iter().map(|s| s.mask_or_empty()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    let mut adam = Adam::new(tc.lr);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::with_capacity(tc.epochs);
    let start = bundle.history.len();
    for e in 1..=tc.epochs {
        let epoch = start + e;
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for idx in order.chunks(tc.batch) {
            let images: Vec<&Image<T>> = idx.iter().map(|&i| &train[i].image).collect();
            let targets: Vec<&Mask> = idx.iter().map(|&i| &masks[i]).collect();
            let (loss, grads, stats) = {
                let mut s = Session::new(&bundle.params, true);
                if bundle.config.freeze_encoder {
                    s = s.freeze("enc.");
                }
                let x = s.input(stack_images(&images)?);
                let y = s.input(stack_masks(&targets)?);
                let out = bundle.net.forward(&mut s, x)?;
                let l = dice_loss_var(&mut s.graph, out.probs, y, tc.dice_epsilon, tc.dice_reduction)?;
                let loss = s.graph.value(l).item().to_f64().unwrap_or(f64::NAN);
                if !loss.is_finite() {
                    return Err(Error::Diverged {
                        epoch,
                        detail: format!("segmenter loss is {loss}"),
                    });
                }
                let mut g = s.graph.backward(l);
                (loss, s.gradients(&mut g), s.batch_stats())
            };
            adam.step(&mut bundle.params, &grads);
            update_running_stats(&mut bundle.params, &stats, BN_MOMENTUM);
            total += loss * idx.len() as f64;
        }
        let train_loss = total / train.len() as f64;
        let (val_loss, val_dsc) = validate_model(&bundle, val, tc.dice_epsilon, tc.batch)?;
        if !val_loss.is_finite() {
            return Err(Error::Diverged {
                epoch,
                detail: format!("validation loss is {val_loss}"),
            });
        }
        log::info!("unet epoch {epoch}: train_loss {train_loss:.4} val_loss {val_loss:.4} val_dsc {val_dsc:.4}");
        if bundle.best.as_ref().is_none_or(|b| val_dsc > b.val_dsc) {
            bundle.best = Some(BestSnapshot {
                epoch,
                val_dsc,
                params: bundle.params.clone(),
            });
        }
        let stats = EpochStats {
            epoch,
            train_loss,
            val_loss,
            val_dsc,
        };
        bundle.history.push(stats.clone());
        history.push(stats);
    }
    Ok((bundle, history))
}

/// `epoch,train_loss,val_loss,val_dsc`.
pub fn write_history_csv(path: &Path, history: &[EpochStats]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Runtime(format!("{}: {e}", path.display())))?;
    for h in history {
        w.serialize(h)
            .map_err(|e| Error::Runtime(format!("{}: {e}", path.display())))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

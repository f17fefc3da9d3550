use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::loss::DiceReduction;

use crate::error::{Error, Result};

/// Dense encoder layout: one dense block per down-stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    /// Layers per dense block.
    pub blocks: Vec<usize>,
    pub growth_rate: usize,
    /// Width of the full-resolution stem.
    pub stem_channels: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl EncoderConfig {
    pub fn desk() -> Self {
        Self {
            blocks: vec![2, 2, 2, 2],
            growth_rate: 16,
            stem_channels: 32,
        }
    }

    /// The 169-layer block layout.
    pub fn full() -> Self {
        Self {
            blocks: vec![6, 12, 32, 32],
            growth_rate: 32,
            stem_channels: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UNetConfig {
    pub encoder: EncoderConfig,
    /// Checkpoint directory or parameter file whose `enc.` tensors seed the
    /// encoder.
    pub pretrained_encoder: Option<PathBuf>,
    pub freeze_encoder: bool,
    /// Decoder widths from the bottleneck up, one per stage.
    pub decoder_channels: Vec<usize>,
    pub input_size: usize,
    pub out_threshold: f64,
    /// Seed for parameter initialization.
    pub seed: u64,
}

impl Default for UNetConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::desk(),
            pretrained_encoder: None,
            freeze_encoder: false,
            decoder_channels: vec![256, 128, 64, 32],
            input_size: 256,
            out_threshold: 0.5,
            seed: 0,
        }
    }
}

impl UNetConfig {
    pub fn stages(&self) -> usize {
        self.encoder.blocks.len()
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.stages();
        if s == 0 {
            return Err(Error::validation("encoder needs at least one dense block"));
        }
        if self.decoder_channels.len() != s {
            return Err(Error::validation(format!(
                "decoder_channels has {} entries for {s} encoder stages",
                self.decoder_channels.len()
            )));
        }
        if self.encoder.growth_rate == 0 || self.encoder.stem_channels == 0 || self.decoder_channels.contains(&0) {
            return Err(Error::validation("channel counts must be positive"));
        }
        if self.input_size == 0 || !self.input_size.is_multiple_of(1 << s) {
            return Err(Error::validation(format!(
                "input_size {} is not divisible by 2^{s}",
                self.input_size
            )));
        }
        if !(0.0..=1.0).contains(&self.out_threshold) {
            return Err(Error::validation("out_threshold must lie in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
    pub dice_epsilon: f64,
    pub dice_reduction: DiceReduction,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 25,
            batch: 32,
            lr: 1e-4,
            seed: 0,
            dice_epsilon: 1.0,
            dice_reduction: DiceReduction::Batch,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 || !(self.lr > 0.0) || !(self.dice_epsilon > 0.0) {
            return Err(Error::validation("batch, lr and dice_epsilon must be positive"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        UNetConfig::default().validate().unwrap();
        TrainConfig::default().validate().unwrap();
        let t = TrainConfig::default();
        assert_eq!((t.epochs, t.batch, t.lr), (25, 32, 1e-4));
    }

    #[test]
    fn decoder_length_must_match_stages() {
        let c = UNetConfig {
            decoder_channels: vec![8, 8],
            ..UNetConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn input_size_must_be_divisible() {
        let c = UNetConfig {
            input_size: 100,
            ..UNetConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(serde_json::from_str::<UNetConfig>(r#"{"input_size": 64, "bogus": 1}"#).is_err());
        let c: UNetConfig = serde_json::from_str(r#"{"input_size": 64}"#).unwrap();
        assert_eq!(c.encoder, EncoderConfig::desk());
    }
}

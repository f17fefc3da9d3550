use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdversarialVariant {
    #[default]
    LeastSquares,
    CrossEntropy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiscriminatorConfig {
    /// Number of stride-2 convolutions; patches are `image_size / 2^depth`
    /// per side.
    pub depth: usize,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self { depth: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TranslatorConfig {
    pub base_channels: usize,
    /// 4 for desk runs, 9 for the full profile.
    pub residual_blocks: usize,
    pub discriminator: DiscriminatorConfig,
    pub lambda_cyc: f64,
    pub adversarial_variant: AdversarialVariant,
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub image_size: usize,
    /// Adds `lambda_identity · (|G(b) − b| + |F(a) − a|)` to the generator
    /// objective.
    pub identity_loss: bool,
    pub lambda_identity: f64,
    /// Zero-initializes the generator output layers so an untrained
    /// generator is the identity map.
    pub identity_init: bool,
    pub seed: u64,
}

impl Default for TranslatorConfig {
    fn default() -> Self {
        Self {
            base_channels: 32,
            residual_blocks: 4,
            discriminator: DiscriminatorConfig::default(),
            lambda_cyc: 10.0,
            adversarial_variant: AdversarialVariant::LeastSquares,
            lr: 2e-4,
            epochs: 10,
            batch: 1,
            image_size: 256,
            identity_loss: false,
            lambda_identity: 0.5,
            identity_init: false,
            seed: 0,
        }
    }
}

impl TranslatorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_cyc > 0.0) {
            return Err(Error::validation("lambda_cyc must be positive"));
        }
        if !(self.lr > 0.0) || self.batch == 0 || self.base_channels == 0 {
            return Err(Error::validation("lr, batch and base_channels must be positive"));
        }
        let depth = self.discriminator.depth;
        if depth == 0 {
            return Err(Error::validation("discriminator depth must be at least 1"));
        }
        if self.image_size < 2 || !self.image_size.is_multiple_of(2) || !self.image_size.is_multiple_of(1 << depth) {
            return Err(Error::validation(format!(
                "image_size {} must be even and divisible by 2^{depth}",
                self.image_size
            )));
        }
        Ok(())
    }
}

//! Unpaired CycleGAN translation between two slice domains.

pub mod config;
pub mod deepfake;
pub mod fidelity;
pub mod loss;
pub mod model;
pub mod nets;

pub use config::{AdversarialVariant, DiscriminatorConfig, TranslatorConfig};
pub use deepfake::{generate_deepfake_set, DeepfakeOptions, DeepfakeSummary, FAKE_PREFIX, FAKE_SOURCE};
pub use fidelity::{fidelity_metrics, mse, ssim};
pub use loss::{adversarial_loss, adversarial_loss_var, cycle_consistency_loss, l1_var, Side};
pub use model::{build_cyclegan, train_translator, CycleGanBundle, Direction, GeneratorTerms, TranslatorEpoch};
pub use nets::{Discriminator, Generator};

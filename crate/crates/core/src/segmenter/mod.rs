//! U-Net segmentation with a densely connected encoder.

pub mod config;
pub mod loss;
pub mod model;
pub mod unet;

pub use config::{EncoderConfig, TrainConfig, UNetConfig};
pub use loss::{dice_loss, dice_loss_var, DiceReduction};
pub use model::{
    build_unet, train_segmenter, validate_model, write_history_csv, BestSnapshot, EpochStats, SegModelBundle,
};
pub use unet::{UNet, UNetOutput};

//! Deepfake slice generation with an unpaired CycleGAN, U-Net segmentation
//! with a densely connected encoder, and overlap/surface evaluation.
//!
//! The numerical code is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the element type used by the pipeline and CLI.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod batch;
pub mod checkpoint;
pub mod cli;
pub mod datakit;
pub mod error;
pub mod evalkit;
pub mod harness;
pub mod segmenter;
pub mod translator;

pub use dfseg_nn::Scalar;
pub use error::{Error, Result};

/// Grayscale slice, `H × W`, intensities in [0, 1] after preprocessing.
pub type Image<T> = ndarray::Array2<T>;
/// Binary lesion mask, `H × W`.
pub type Mask = ndarray::Array2<bool>;

/// Segmentation model at the pipeline's element type.
pub type SegModel = segmenter::SegModelBundle<f32>;
/// CycleGAN translator at the pipeline's element type.
pub type CycleGan = translator::CycleGanBundle<f32>;

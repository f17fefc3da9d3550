//! Minimal CPU autograd for convolutional networks.
//!
//! All numerics are generic over [`Scalar`] (f32 or f64). Training code
//! uses f32; gradient checks instantiate the same graphs in f64.

#![allow(clippy::needless_range_loop)]

pub mod error;
pub mod graph;
pub mod kernels;
pub mod layers;
pub mod optim;
pub mod params;
pub mod scalar;
pub mod tensor;

pub use error::{NnError, Result};
pub use graph::{Gradients, Graph, NormStats, Var};
pub use layers::{update_running_stats, BatchNorm2d, Conv2d, ConvTranspose2d, Init, Session};
pub use optim::Adam;
pub use params::{fold_channels, ParamStore};
pub use scalar::{DType, Scalar};
pub use tensor::Tensor;

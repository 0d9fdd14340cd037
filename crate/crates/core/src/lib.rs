//! A small CNN engine for U-net semantic segmentation and unsupervised
//! change detection from encoder feature-map differences.

pub mod changedet;
pub mod error;
mod gemm;
pub mod metrics;
pub mod ops;
pub mod parallel;
pub mod synthdata;
pub mod tensor;
pub mod trainer;
pub mod unet;

pub use error::{Error, Result};
pub use tensor::Tensor;

//! The five-level U-net.

mod config;
mod layers;
mod model;

pub use config::{UNetConfig, LEVELS, POOL_KERNEL, POOL_STRIDE};
pub use layers::{Conv, ConvBlock, Gradients, ParamKind, ParamMut, ParamRef};
pub use model::{BranchPattern, DecoderLevel, EncoderLevel, EncoderTaps, TrainStep, UNetModel};

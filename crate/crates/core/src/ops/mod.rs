//! Forward kernels and their gradients for every layer type the U-net uses.

mod activation;
mod batchnorm;
mod conv;
mod loss;
mod pool;

pub use activation::{leaky_relu, leaky_relu_grad, softmax_channels, softmax_channels_grad, LEAKY_SLOPE};
pub use batchnorm::{
    batchnorm, batchnorm_eval, batchnorm_grad, batchnorm_train, BatchNormCache, BatchNormGrads,
    BatchNormState, Mode, DEFAULT_EPSILON, DEFAULT_MOMENTUM,
};
pub use conv::{conv2d, conv2d_grad, deconv2d, deconv2d_grad, ConvGrads, ConvSpec};
pub use loss::{cross_entropy_loss, softmax_cross_entropy_grad, PROB_FLOOR};
pub use pool::{maxpool, maxpool_grad, PoolRecord};

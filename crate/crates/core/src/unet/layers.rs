//! Layer blocks with hand-wired backward passes.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::ops::{
    batchnorm_eval, batchnorm_grad, batchnorm_train, conv2d, conv2d_grad, deconv2d, deconv2d_grad,
    leaky_relu, leaky_relu_grad, BatchNormCache, BatchNormState, ConvSpec,
};
use crate::tensor::Tensor;

/// Whether a parameter is updated by the optimizer or is a running statistic.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Trainable,
    RunningStat,
}

pub struct ParamRef<'a> {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: &'a [f32],
    pub kind: ParamKind,
}

pub struct ParamMut<'a> {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: &'a mut [f32],
    pub kind: ParamKind,
}

/// Parameter gradients keyed by parameter name.
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    entries: HashMap<String, Vec<f32>>,
}

impl Gradients {
    pub fn insert(&mut self, name: String, grad: Vec<f32>) {
        self.entries.insert(name, grad);
    }

    pub fn get(&self, name: &str) -> Option<&[f32]> {
        self.entries.get(name).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f32])> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn is_finite(&self) -> bool {
        self.entries.values().all(|g| g.iter().all(|v| v.is_finite()))
    }
}

/// Plain or transposed convolution with bias.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv {
    pub weight: Tensor,
    pub bias: Vec<f32>,
    pub spec: ConvSpec,
    pub transposed: bool,
}

impl Conv {
    /// Uniform in `±gain·sqrt(3 / fan_in)`, zero bias.
    pub(crate) fn init(spec: ConvSpec, transposed: bool, gain: f32, rng: &mut ChaCha8Rng) -> Self {
        let k = spec.kernel;
        let shape = if transposed {
            [spec.in_channels, spec.out_channels, k, k]
        } else {
            [spec.out_channels, spec.in_channels, k, k]
        };
        // A transposed conv with stride s feeds each output from ~k²/s² taps per input channel.
        let taps = if transposed {
            (k * k) as f32 / (spec.stride * spec.stride) as f32
        } else {
            (k * k) as f32
        };
        let fan_in = spec.in_channels as f32 * taps;
        let bound = gain * (3.0 / fan_in).sqrt();
        let weight = Tensor::from_fn(shape, |_, _, _, _| rng.gen_range(-bound..bound));
        Conv {
            weight,
            bias: vec![0.0; spec.out_channels],
            spec,
            transposed,
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        if self.transposed {
            deconv2d(x, &self.weight, &self.bias, &self.spec)
        } else {
            conv2d(x, &self.weight, &self.bias, &self.spec)
        }
    }

    /// Returns the input gradient; parameter gradients go into `grads`.
    pub fn backward(&self, x: &Tensor, dy: &Tensor, prefix: &str, grads: &mut Gradients) -> Result<Tensor> {
        let g = if self.transposed {
            deconv2d_grad(x, &self.weight, &self.spec, dy)?
        } else {
            conv2d_grad(x, &self.weight, &self.spec, dy)?
        };
        grads.insert(format!("{prefix}.weight"), g.weight.into_vec());
        grads.insert(format!("{prefix}.bias"), g.bias);
        Ok(g.input)
    }

    pub(crate) fn params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        out.push(ParamRef {
            name: format!("{prefix}.weight"),
            dims: self.weight.shape().to_vec(),
            data: self.weight.data(),
            kind: ParamKind::Trainable,
        });
        out.push(ParamRef {
            name: format!("{prefix}.bias"),
            dims: vec![self.bias.len()],
            data: &self.bias,
            kind: ParamKind::Trainable,
        });
    }

    pub(crate) fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a>>) {
        let dims = self.weight.shape().to_vec();
        out.push(ParamMut {
            name: format!("{prefix}.weight"),
            dims,
            data: self.weight.data_mut(),
            kind: ParamKind::Trainable,
        });
        out.push(ParamMut {
            name: format!("{prefix}.bias"),
            dims: vec![self.bias.len()],
            data: &mut self.bias,
            kind: ParamKind::Trainable,
        });
    }
}

/// (Transposed) convolution → batch norm → leaky ReLU.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvBlock {
    pub conv: Conv,
    pub bn: BatchNormState,
}

pub(crate) struct ConvBlockCache {
    input: Tensor,
    conv_out_shape: [usize; 4],
    bn: BatchNormCache,
    pre_activation: Tensor,
}

impl ConvBlockCache {
    /// Which pre-activations took the identity branch of the leaky ReLU.
    pub(crate) fn active(&self) -> Vec<bool> {
        self.pre_activation.data().iter().map(|&v| v > 0.0).collect()
    }
}

impl ConvBlock {
    pub(crate) fn init(spec: ConvSpec, transposed: bool, slope: f32, rng: &mut ChaCha8Rng) -> Self {
        let gain = (2.0 / (1.0 + slope * slope)).sqrt();
        ConvBlock {
            conv: Conv::init(spec, transposed, gain, rng),
            bn: BatchNormState::new(spec.out_channels),
        }
    }

    pub fn eval(&self, x: &Tensor, slope: f32) -> Result<Tensor> {
        let z = batchnorm_eval(&self.conv.forward(x)?, &self.bn)?;
        Ok(leaky_relu(&z, slope))
    }

    pub(crate) fn train(&mut self, x: &Tensor, slope: f32) -> Result<(Tensor, ConvBlockCache)> {
        let y = self.conv.forward(x)?;
        let (z, bn) = batchnorm_train(&y, &mut self.bn)?;
        let out = leaky_relu(&z, slope);
        Ok((
            out,
            ConvBlockCache {
                input: x.clone(),
                conv_out_shape: y.shape(),
                bn,
                pre_activation: z,
            },
        ))
    }

    pub(crate) fn backward(
        &self,
        cache: &ConvBlockCache,
        dy: &Tensor,
        slope: f32,
        prefix: &str,
        grads: &mut Gradients,
    ) -> Result<Tensor> {
        let dz = leaky_relu_grad(&cache.pre_activation, dy, slope)?;
        let g = batchnorm_grad(&cache.bn, &self.bn, &dz)?;
        if g.input.shape() != cache.conv_out_shape {
            return Err(Error::Degenerate("cached conv output shape changed".into()));
        }
        grads.insert(format!("{prefix}.bn.scale"), g.scale);
        grads.insert(format!("{prefix}.bn.shift"), g.shift);
        self.conv.backward(&cache.input, &g.input, prefix, grads)
    }

    pub(crate) fn params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a>>) {
        self.conv.params(prefix, out);
        let bn = &self.bn;
        let c = bn.channels();
        for (suffix, data, kind) in [
            ("scale", &bn.scale, ParamKind::Trainable),
            ("shift", &bn.shift, ParamKind::Trainable),
            ("running_mean", &bn.running_mean, ParamKind::RunningStat),
            ("running_var", &bn.running_var, ParamKind::RunningStat),
        ] {
            out.push(ParamRef {
                name: format!("{prefix}.bn.{suffix}"),
                dims: vec![c],
                data,
                kind,
            });
        }
    }

    pub(crate) fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a>>) {
        self.conv.params_mut(prefix, out);
        let bn = &mut self.bn;
        let c = bn.scale.len();
        for (suffix, data, kind) in [
            ("scale", &mut bn.scale, ParamKind::Trainable),
            ("shift", &mut bn.shift, ParamKind::Trainable),
            ("running_mean", &mut bn.running_mean, ParamKind::RunningStat),
            ("running_var", &mut bn.running_var, ParamKind::RunningStat),
        ] {
            out.push(ParamMut {
                name: format!("{prefix}.bn.{suffix}"),
                dims: vec![c],
                data,
                kind,
            });
        }
    }
}

use crate::error::{check_dim, Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_MOMENTUM: f32 = 0.1;
pub const DEFAULT_EPSILON: f32 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Per-channel affine parameters and running statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormState {
    pub scale: Vec<f32>,
    pub shift: Vec<f32>,
    pub running_mean: Vec<f32>,
    pub running_var: Vec<f32>,
    pub momentum: f32,
    pub epsilon: f32,
}

impl BatchNormState {
    pub fn new(channels: usize) -> Self {
        BatchNormState {
            scale: vec![1.0; channels],
            shift: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum: DEFAULT_MOMENTUM,
            epsilon: DEFAULT_EPSILON,
        }
    }

    pub fn channels(&self) -> usize {
        self.scale.len()
    }
}

/// Saved forward quantities for the backward pass.
#[derive(Clone, Debug)]
pub struct BatchNormCache {
    pub normalized: Tensor,
    pub inv_std: Vec<f32>,
}

#[derive(Clone, Debug)]
pub struct BatchNormGrads {
    pub input: Tensor,
    pub scale: Vec<f32>,
    pub shift: Vec<f32>,
}

/// Mode-dispatching wrapper. Train mode updates the running statistics.
pub fn batchnorm(input: &Tensor, state: &mut BatchNormState, mode: Mode) -> Result<Tensor> {
    match mode {
        Mode::Train => batchnorm_train(input, state).map(|(y, _)| y),
        Mode::Eval => batchnorm_eval(input, state),
    }
}

pub fn batchnorm_eval(input: &Tensor, state: &BatchNormState) -> Result<Tensor> {
    check_dim("batchnorm channels", state.channels(), input.channels())?;
    let plane = input.plane_len();
    let mut out = input.clone();
    for n in 0..input.batch() {
        for (c, chunk) in out.sample_mut(n).chunks_mut(plane).enumerate() {
            let inv = 1.0 / (state.running_var[c] + state.epsilon).sqrt();
            let (mean, g, b) = (state.running_mean[c], state.scale[c], state.shift[c]);
            for v in chunk {
                *v = (*v - mean) * inv * g + b;
            }
        }
    }
    Ok(out)
}

pub fn batchnorm_train(input: &Tensor, state: &mut BatchNormState) -> Result<(Tensor, BatchNormCache)> {
    let channels = state.channels();
    check_dim("batchnorm channels", channels, input.channels())?;
    let plane = input.plane_len();
    let count = input.batch() * plane;
    if count == 0 {
        return Err(Error::Degenerate("batch norm over zero elements".into()));
    }
    let mut mean = vec![0.0f32; channels];
    for n in 0..input.batch() {
        for (c, chunk) in input.sample(n).chunks(plane).enumerate() {
            mean[c] += chunk.iter().sum::<f32>();
        }
    }
    for m in &mut mean {
        *m /= count as f32;
    }
    let mut var = vec![0.0f32; channels];
    for n in 0..input.batch() {
        for (c, chunk) in input.sample(n).chunks(plane).enumerate() {
            var[c] += chunk.iter().map(|&x| (x - mean[c]) * (x - mean[c])).sum::<f32>();
        }
    }
    for v in &mut var {
        *v /= count as f32;
    }
    let inv_std: Vec<f32> = var.iter().map(|&v| 1.0 / (v + state.epsilon).sqrt()).collect();

    let mut normalized = input.clone();
    let mut out = input.clone();
    for n in 0..input.batch() {
        let xs = normalized.sample_mut(n);
        let ys = out.sample_mut(n);
        for c in 0..channels {
            let range = c * plane..(c + 1) * plane;
            for (xh, y) in xs[range.clone()].iter_mut().zip(&mut ys[range]) {
                *xh = (*xh - mean[c]) * inv_std[c];
                *y = *xh * state.scale[c] + state.shift[c];
            }
        }
    }

    let m = state.momentum;
    let unbias = if count > 1 { count as f32 / (count - 1) as f32 } else { 1.0 };
    for c in 0..channels {
        state.running_mean[c] = (1.0 - m) * state.running_mean[c] + m * mean[c];
        state.running_var[c] = (1.0 - m) * state.running_var[c] + m * var[c] * unbias;
    }
    Ok((out, BatchNormCache { normalized, inv_std }))
}

pub fn batchnorm_grad(cache: &BatchNormCache, state: &BatchNormState, upstream: &Tensor) -> Result<BatchNormGrads> {
    let xh = &cache.normalized;
    if xh.shape() != upstream.shape() {
        let (a, b) = (xh.shape(), upstream.shape());
        let axis = (0..4).find(|&i| a[i] != b[i]).unwrap();
        return Err(Error::dim(["batch", "channels", "height", "width"][axis], a[axis], b[axis]));
    }
    let channels = state.channels();
    let plane = xh.plane_len();
    let count = (xh.batch() * plane) as f32;
    let mut dshift = vec![0.0f32; channels];
    let mut dscale = vec![0.0f32; channels];
    for n in 0..xh.batch() {
        let (x, dy) = (xh.sample(n), upstream.sample(n));
        for c in 0..channels {
            let r = c * plane..(c + 1) * plane;
            for (&xv, &g) in x[r.clone()].iter().zip(&dy[r]) {
                dshift[c] += g;
                dscale[c] += g * xv;
            }
        }
    }
    let mut dx = upstream.clone();
    for n in 0..xh.batch() {
        let x = xh.sample(n);
        let d = dx.sample_mut(n);
        for c in 0..channels {
            let k = state.scale[c] * cache.inv_std[c] / count;
            let r = c * plane..(c + 1) * plane;
            for (dv, &xv) in d[r.clone()].iter_mut().zip(&x[r]) {
                *dv = k * (count * *dv - dshift[c] - xv * dscale[c]);
            }
        }
    }
    Ok(BatchNormGrads {
        input: dx,
        scale: dscale,
        shift: dshift,
    })
}

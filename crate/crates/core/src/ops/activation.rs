use crate::error::{check_dim, Result};
use crate::tensor::Tensor;

pub const LEAKY_SLOPE: f32 = 0.2;

pub fn leaky_relu(input: &Tensor, slope: f32) -> Tensor {
    input.map(|x| if x > 0.0 { x } else { slope * x })
}

/// Derivative is `slope` at and below zero.
pub fn leaky_relu_grad(input: &Tensor, upstream: &Tensor, slope: f32) -> Result<Tensor> {
    check_dim("upstream length", input.len(), upstream.len())?;
    let data = input
        .data()
        .iter()
        .zip(upstream.data())
        .map(|(&x, &g)| if x > 0.0 { g } else { slope * g })
        .collect();
    Tensor::from_vec(input.shape(), data)
}

/// Softmax across the channel axis, independently per pixel.
pub fn softmax_channels(input: &Tensor) -> Tensor {
    let [n, c, h, w] = input.shape();
    let plane = h * w;
    let mut out = input.clone();
    let mut exps = vec![0.0f32; c];
    for i in 0..n {
        let s = out.sample_mut(i);
        for p in 0..plane {
            let max = (0..c).map(|ch| s[ch * plane + p]).fold(f32::NEG_INFINITY, f32::max);
            let mut sum = 0.0f32;
            for (ch, e) in exps.iter_mut().enumerate() {
                *e = (s[ch * plane + p] - max).exp();
                sum += *e;
            }
            for (ch, e) in exps.iter().enumerate() {
                s[ch * plane + p] = e / sum;
            }
        }
    }
    out
}

/// Vector-Jacobian product of [`softmax_channels`]: `p_c (g_c - Σ_k p_k g_k)`.
pub fn softmax_channels_grad(probs: &Tensor, upstream: &Tensor) -> Result<Tensor> {
    check_dim("upstream length", probs.len(), upstream.len())?;
    let [n, c, h, w] = probs.shape();
    let plane = h * w;
    let mut out = Tensor::zeros(probs.shape());
    for i in 0..n {
        let (p, g) = (probs.sample(i), upstream.sample(i));
        let o = out.sample_mut(i);
        for px in 0..plane {
            let dot: f32 = (0..c).map(|ch| p[ch * plane + px] * g[ch * plane + px]).sum();
            for ch in 0..c {
                let k = ch * plane + px;
                o[k] = p[k] * (g[k] - dot);
            }
        }
    }
    Ok(out)
}

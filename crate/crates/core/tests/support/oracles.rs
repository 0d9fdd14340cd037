//! Scalar-loop reference kernels and finite-difference helpers.
//!
//! Written straight from the definitions, sharing no code with the library.
//! Generic over the float type: instantiated at `f32` they reduce in the
//! same canonical order the library documents (input channel, kernel row,
//! kernel column for convolution; kernel row/column then input channel for
//! the transposed form) and can be compared bit for bit; instantiated at
//! `f64` they give finite differences free of single-precision noise.

#![allow(dead_code)]

use num_traits::Float;
use unet_cd::ops::ConvSpec;
use unet_cd::Tensor;

#[derive(Clone, Debug)]
pub struct Arr<T> {
    pub shape: [usize; 4],
    pub data: Vec<T>,
}

impl<T: Float> Arr<T> {
    pub fn from_fn(shape: [usize; 4], mut f: impl FnMut(usize, usize, usize, usize) -> T) -> Self {
        let mut data = Vec::new();
        for a in 0..shape[0] {
            for b in 0..shape[1] {
                for c in 0..shape[2] {
                    for d in 0..shape[3] {
                        data.push(f(a, b, c, d));
                    }
                }
            }
        }
        Arr { shape, data }
    }

    pub fn at(&self, a: usize, b: usize, c: usize, d: usize) -> T {
        let [_, s1, s2, s3] = self.shape;
        self.data[((a * s1 + b) * s2 + c) * s3 + d]
    }
}

pub fn arr32(t: &Tensor) -> Arr<f32> {
    Arr { shape: t.shape(), data: t.data().to_vec() }
}

pub fn arr64(t: &Tensor) -> Arr<f64> {
    Arr { shape: t.shape(), data: t.data().iter().map(|&v| f64::from(v)).collect() }
}

pub fn tensor(a: &Arr<f32>) -> Tensor {
    Tensor::from_vec(a.shape, a.data.clone()).unwrap()
}

pub fn conv2d_ref<T: Float>(x: &Arr<T>, w: &Arr<T>, bias: &[T], spec: &ConvSpec) -> Arr<T> {
    let [n, ci, h, wd] = x.shape;
    let (k, s, p) = (spec.kernel as isize, spec.stride as isize, spec.padding as isize);
    let oh = ((h as isize - k + 2 * p) / s + 1) as usize;
    let ow = ((wd as isize - k + 2 * p) / s + 1) as usize;
    Arr::from_fn([n, spec.out_channels, oh, ow], |b, o, oy, ox| {
        let mut acc = T::zero();
        for c in 0..ci {
            for ky in 0..k {
                for kx in 0..k {
                    let iy = oy as isize * s + ky - p;
                    let ix = ox as isize * s + kx - p;
                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                        continue;
                    }
                    acc = acc + w.at(o, c, ky as usize, kx as usize) * x.at(b, c, iy as usize, ix as usize);
                }
            }
        }
        acc + bias[o]
    })
}

pub fn deconv2d_ref<T: Float>(x: &Arr<T>, w: &Arr<T>, bias: &[T], spec: &ConvSpec) -> Arr<T> {
    let [n, ci, h, wd] = x.shape;
    let (k, s, p) = (spec.kernel, spec.stride, spec.padding);
    let oh = (h - 1) * s + k - 2 * p;
    let ow = (wd - 1) * s + k - 2 * p;
    Arr::from_fn([n, spec.out_channels, oh, ow], |b, o, oy, ox| {
        let mut acc = T::zero();
        for ky in 0..k {
            for kx in 0..k {
                let ty = oy as isize + p as isize - ky as isize;
                let tx = ox as isize + p as isize - kx as isize;
                if ty < 0 || tx < 0 || ty % s as isize != 0 || tx % s as isize != 0 {
                    continue;
                }
                let (iy, ix) = (ty as usize / s, tx as usize / s);
                if iy >= h || ix >= wd {
                    continue;
                }
                let mut part = T::zero();
                for c in 0..ci {
                    part = part + x.at(b, c, iy, ix) * w.at(c, o, ky, kx);
                }
                acc = acc + part;
            }
        }
        acc + bias[o]
    })
}

/// Returns (output, flat argmax indices) for unpadded max pooling.
pub fn maxpool_ref<T: Float>(x: &Arr<T>, k: usize, s: usize) -> (Arr<T>, Vec<usize>) {
    let [n, c, h, w] = x.shape;
    let oh = (h - k) / s + 1;
    let ow = (w - k) / s + 1;
    let mut idx = Vec::new();
    let out = Arr::from_fn([n, c, oh, ow], |b, ch, oy, ox| {
        let mut best = (T::neg_infinity(), usize::MAX);
        for ky in 0..k {
            for kx in 0..k {
                let (y, xx) = (oy * s + ky, ox * s + kx);
                let v = x.at(b, ch, y, xx);
                let flat = ((b * c + ch) * h + y) * w + xx;
                if v > best.0 || (v == best.0 && flat < best.1) {
                    best = (v, flat);
                }
            }
        }
        idx.push(best.1);
        best.0
    });
    (out, idx)
}

/// Train-mode batch normalization with biased batch variance.
pub fn batchnorm_ref<T: Float>(x: &Arr<T>, scale: &[T], shift: &[T], eps: T) -> Arr<T> {
    let [n, c, h, w] = x.shape;
    let count = T::from(n * h * w).unwrap();
    let mut mean = vec![T::zero(); c];
    let mut var = vec![T::zero(); c];
    for ch in 0..c {
        for b in 0..n {
            for y in 0..h {
                for xx in 0..w {
                    mean[ch] = mean[ch] + x.at(b, ch, y, xx);
                }
            }
        }
        mean[ch] = mean[ch] / count;
        for b in 0..n {
            for y in 0..h {
                for xx in 0..w {
                    let d = x.at(b, ch, y, xx) - mean[ch];
                    var[ch] = var[ch] + d * d;
                }
            }
        }
        var[ch] = var[ch] / count;
    }
    Arr::from_fn(x.shape, |b, ch, y, xx| {
        (x.at(b, ch, y, xx) - mean[ch]) / (var[ch] + eps).sqrt() * scale[ch] + shift[ch]
    })
}

pub fn leaky_ref<T: Float>(x: &Arr<T>, slope: T) -> Arr<T> {
    Arr { shape: x.shape, data: x.data.iter().map(|&v| if v > T::zero() { v } else { slope * v }).collect() }
}

pub fn softmax_ref<T: Float>(x: &Arr<T>) -> Arr<T> {
    let [_, c, _, _] = x.shape;
    Arr::from_fn(x.shape, |b, ch, y, xx| {
        let max = (0..c).map(|k| x.at(b, k, y, xx)).fold(T::neg_infinity(), T::max);
        let sum = (0..c).fold(T::zero(), |s, k| s + (x.at(b, k, y, xx) - max).exp());
        (x.at(b, ch, y, xx) - max).exp() / sum
    })
}

pub fn cross_entropy_ref<T: Float>(probs: &Arr<T>, targets: &[u8]) -> T {
    let [n, _, h, w] = probs.shape;
    let floor = T::from(1e-12).unwrap();
    let mut total = T::zero();
    for b in 0..n {
        for y in 0..h {
            for x in 0..w {
                let t = targets[(b * h + y) * w + x] as usize;
                total = total - probs.at(b, t, y, x).max(floor).ln();
            }
        }
    }
    total / T::from(n * h * w).unwrap()
}

/// Relative error with an absolute floor on the denominator.
pub fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Central difference of `f` with respect to `data[i]`.
pub fn central_diff(data: &mut [f64], i: usize, h: f64, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
    let orig = data[i];
    data[i] = orig + h;
    let plus = f(data);
    data[i] = orig - h;
    let minus = f(data);
    data[i] = orig;
    (plus - minus) / (2.0 * h)
}

/// `Σ y·r`.
pub fn project(y: &Arr<f64>, r: &Tensor) -> f64 {
    y.data.iter().zip(r.data()).map(|(&a, &b)| a * f64::from(b)).sum()
}

pub fn with_data(shape: [usize; 4], d: &[f64]) -> Arr<f64> {
    Arr { shape, data: d.to_vec() }
}

/// Difference image by explicit 4-deep loop: 0 where |f − f′| ≤ θ, else f′.
pub fn difference_image_ref(f: &Arr<f32>, fp: &Arr<f32>, theta: f32) -> Arr<f32> {
    Arr::from_fn(f.shape, |a, b, c, d| {
        let x = f.at(a, b, c, d);
        let y = fp.at(a, b, c, d);
        if (x - y).abs() <= theta {
            0.0
        } else {
            y
        }
    })
}

/// Per-pixel index of the largest channel, ties to the lowest index.
pub fn argmax_ref(probs: &Arr<f32>) -> Vec<u8> {
    let [n, c, h, w] = probs.shape;
    let mut out = Vec::new();
    for b in 0..n {
        for y in 0..h {
            for x in 0..w {
                let mut best = 0;
                for k in 0..c {
                    if probs.at(b, k, y, x) > probs.at(b, best, y, x) {
                        best = k;
                    }
                }
                out.push(best as u8);
            }
        }
    }
    out
}

/// (tp, tn, fp, fn) by a double loop over predicted and true labels.
pub fn change_counts_ref(pred: &[bool], truth: &[bool]) -> [usize; 4] {
    let mut counts = [0; 4];
    for p in [true, false] {
        for t in [true, false] {
            let n = pred.iter().zip(truth).filter(|&(&a, &b)| a == p && b == t).count();
            let slot = match (p, t) {
                (true, true) => 0,
                (false, false) => 1,
                (true, false) => 2,
                (false, true) => 3,
            };
            counts[slot] = n;
        }
    }
    counts
}

/// Correct and incorrect counts per true class by a double loop over classes.
pub fn class_counts_ref(pred: &[u8], truth: &[u8], mask: Option<&[bool]>, classes: u8) -> Vec<(usize, usize)> {
    (0..classes)
        .map(|t| {
            let mut ok = 0;
            let mut bad = 0;
            for p in 0..classes {
                let n = (0..truth.len())
                    .filter(|&i| mask.is_none_or(|m| m[i]) && truth[i] == t && pred[i] == p)
                    .count();
                if p == t {
                    ok += n;
                } else {
                    bad += n;
                }
            }
            (ok, bad)
        })
        .collect()
}

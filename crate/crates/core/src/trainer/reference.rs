//! Slow scalar-loop U-net forward in f64, used as the numeric side of the
//! composite gradient check. Mirrors the train-mode forward of `UNetModel`
//! on a fixed piece of its piecewise-linear structure.

use std::collections::HashMap;

use crate::ops::PROB_FLOOR;
use crate::unet::{BranchPattern, UNetConfig, POOL_KERNEL, POOL_STRIDE};

#[derive(Clone)]
pub(super) struct Arr {
    s: [usize; 4],
    d: Vec<f64>,
}

impl Arr {
    pub(super) fn new(s: [usize; 4], d: Vec<f64>) -> Self {
        assert_eq!(d.len(), s.iter().product::<usize>());
        Arr { s, d }
    }

    fn zeros(s: [usize; 4]) -> Self {
        Arr { s, d: vec![0.0; s.iter().product()] }
    }

    fn idx(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        ((n * self.s[1] + c) * self.s[2] + h) * self.s[3] + w
    }
}

pub(super) type Params = HashMap<String, (Vec<usize>, Vec<f64>)>;

struct Net<'a> {
    p: &'a Params,
    pattern: &'a BranchPattern,
    slope: f64,
    eps: f64,
}

impl Net<'_> {
    fn get(&self, name: &str) -> &[f64] {
        &self.p[name].1
    }

    fn conv(&self, x: &Arr, prefix: &str) -> Arr {
        let w = self.get(&format!("{prefix}.weight"));
        let b = self.get(&format!("{prefix}.bias"));
        let ci = x.s[1];
        let co = b.len();
        let (h, wd) = (x.s[2], x.s[3]);
        let mut y = Arr::zeros([x.s[0], co, h, wd]);
        for n in 0..x.s[0] {
            for o in 0..co {
                for oy in 0..h {
                    for ox in 0..wd {
                        let mut acc = b[o];
                        for i in 0..ci {
                            for ky in 0..3 {
                                for kx in 0..3 {
                                    let iy = oy as isize + ky as isize - 1;
                                    let ix = ox as isize + kx as isize - 1;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                        continue;
                                    }
                                    acc += w[((o * ci + i) * 3 + ky) * 3 + kx] * x.d[x.idx(n, i, iy as usize, ix as usize)];
                                }
                            }
                        }
                        let k = y.idx(n, o, oy, ox);
                        y.d[k] = acc;
                    }
                }
            }
        }
        y
    }

    fn deconv(&self, x: &Arr, prefix: &str) -> Arr {
        let w = self.get(&format!("{prefix}.weight"));
        let b = self.get(&format!("{prefix}.bias"));
        let ci = x.s[1];
        let co = b.len();
        let (oh, ow) = ((x.s[2] - 1) * 2 + 3, (x.s[3] - 1) * 2 + 3);
        let mut y = Arr::zeros([x.s[0], co, oh, ow]);
        for n in 0..x.s[0] {
            for o in 0..co {
                for v in 0..oh * ow {
                    let k = y.idx(n, o, 0, 0) + v;
                    y.d[k] = b[o];
                }
            }
            for i in 0..ci {
                for iy in 0..x.s[2] {
                    for ix in 0..x.s[3] {
                        let v = x.d[x.idx(n, i, iy, ix)];
                        for o in 0..co {
                            for ky in 0..3 {
                                for kx in 0..3 {
                                    let k = y.idx(n, o, iy * 2 + ky, ix * 2 + kx);
                                    y.d[k] += v * w[((i * co + o) * 3 + ky) * 3 + kx];
                                }
                            }
                        }
                    }
                }
            }
        }
        y
    }

    fn batchnorm_train(&self, x: &Arr, prefix: &str) -> Arr {
        let scale = self.get(&format!("{prefix}.bn.scale"));
        let shift = self.get(&format!("{prefix}.bn.shift"));
        let [n, c, h, w] = x.s;
        let count = (n * h * w) as f64;
        let mut y = x.clone();
        for ch in 0..c {
            let vals = || (0..n).flat_map(move |s| (0..h * w).map(move |i| (s, i)));
            let mean = vals().map(|(s, i)| x.d[x.idx(s, ch, 0, 0) + i]).sum::<f64>() / count;
            let var = vals().map(|(s, i)| (x.d[x.idx(s, ch, 0, 0) + i] - mean).powi(2)).sum::<f64>() / count;
            let inv = 1.0 / (var + self.eps).sqrt();
            for (s, i) in vals() {
                let k = x.idx(s, ch, 0, 0) + i;
                y.d[k] = (x.d[k] - mean) * inv * scale[ch] + shift[ch];
            }
        }
        y
    }

    fn block(&self, x: &Arr, prefix: &str, transposed: bool) -> Arr {
        let y = if transposed { self.deconv(x, prefix) } else { self.conv(x, prefix) };
        let mut z = self.batchnorm_train(&y, prefix);
        let active = &self.pattern.active[prefix];
        assert_eq!(active.len(), z.d.len(), "branch pattern for {prefix}");
        for (v, &on) in z.d.iter_mut().zip(active) {
            if !on {
                *v *= self.slope;
            }
        }
        z
    }
}

/// Pooling with the window maxima fixed to `argmax` (flat input indices).
fn maxpool(x: &Arr, argmax: &[usize]) -> Arr {
    let (k, s) = (POOL_KERNEL, POOL_STRIDE);
    let oh = (x.s[2] - k) / s + 1;
    let ow = (x.s[3] - k) / s + 1;
    let mut y = Arr::zeros([x.s[0], x.s[1], oh, ow]);
    for n in 0..x.s[0] {
        for c in 0..x.s[1] {
            for oy in 0..oh {
                for ox in 0..ow {
                    let i = y.idx(n, c, oy, ox);
                    let a = argmax[i];
                    let (ay, ax) = ((a / x.s[3]) % x.s[2], a % x.s[3]);
                    assert!(a / (x.s[2] * x.s[3]) == n * x.s[1] + c, "argmax outside its plane");
                    assert!((oy * s..oy * s + k).contains(&ay) && (ox * s..ox * s + k).contains(&ax), "argmax outside its window");
                    y.d[i] = x.d[a];
                }
            }
        }
    }
    y
}

fn fit_concat(skip: &Arr, up: &Arr) -> Arr {
    let [n, cs, h, w] = skip.s;
    let cu = up.s[1];
    let mut y = Arr::zeros([n, cs + cu, h, w]);
    for s in 0..n {
        for c in 0..cs + cu {
            for yy in 0..h {
                for xx in 0..w {
                    let v = if c < cs {
                        skip.d[skip.idx(s, c, yy, xx)]
                    } else if yy < up.s[2] && xx < up.s[3] {
                        up.d[up.idx(s, c - cs, yy, xx)]
                    } else {
                        0.0
                    };
                    let i = y.idx(s, c, yy, xx);
                    y.d[i] = v;
                }
            }
        }
    }
    y
}

/// Mean train-mode cross-entropy of the network described by `params`, with
/// every leaky-ReLU branch and pooling choice taken from `pattern`.
pub(super) fn loss(
    config: &UNetConfig,
    params: &Params,
    pattern: &BranchPattern,
    eps: f64,
    x: &Arr,
    targets: &[u8],
) -> f64 {
    let net = Net {
        p: params,
        pattern,
        slope: f64::from(config.leaky_slope),
        eps,
    };
    let mut taps = Vec::new();
    let mut a = x.clone();
    for l in 1..=config.levels {
        let y = net.block(&a, &format!("enc{l}.conv1"), false);
        let tap = net.block(&y, &format!("enc{l}.conv2"), false);
        if l < config.levels {
            a = maxpool(&tap, &pattern.pool_argmax[l - 1]);
        }
        taps.push(tap);
    }
    let mut d = taps.pop().unwrap();
    for l in (1..config.levels).rev() {
        let up = net.block(&d, &format!("dec{l}.up"), true);
        let cat = fit_concat(&taps[l - 1], &up);
        let y = net.block(&cat, &format!("dec{l}.conv1"), false);
        d = net.block(&y, &format!("dec{l}.conv2"), false);
    }
    let logits = net.conv(&d, "head");
    let [n, c, h, w] = logits.s;
    let mut total = 0.0;
    for s in 0..n {
        for i in 0..h * w {
            let z: Vec<f64> = (0..c).map(|ch| logits.d[logits.idx(s, ch, 0, 0) + i]).collect();
            let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = z.iter().map(|v| (v - m).exp()).sum();
            let t = usize::from(targets[s * h * w + i]);
            let p = (z[t] - m).exp() / sum;
            total -= p.max(f64::from(PROB_FLOOR)).ln();
        }
    }
    total / (n * h * w) as f64
}

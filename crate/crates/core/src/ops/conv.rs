//! Convolution and transposed convolution via im2col and a fixed-order GEMM.
//!
//! Weight layouts follow the usual conventions: convolution weights are
//! `(out_channels, in_channels, k, k)`, transposed-convolution weights are
//! `(in_channels, out_channels, k, k)`. Padding is zero padding.

use crate::error::{check_dim, Error, Result};
use crate::gemm::{matmul, transpose};
use crate::parallel::map_indexed;
use crate::tensor::Tensor;

/// Geometry of a square convolution window.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl ConvSpec {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Self {
        ConvSpec {
            kernel,
            stride,
            padding,
            in_channels,
            out_channels,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.kernel == 0 || self.stride == 0 || self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::Config(format!("invalid conv spec {self:?}")));
        }
        Ok(())
    }

    /// Convolution output extent `floor((n - k + 2p) / s) + 1`.
    pub fn output_extent(&self, n: usize) -> Result<usize> {
        self.validate()?;
        let padded = n + 2 * self.padding;
        if padded < self.kernel {
            return Err(Error::TooSmall {
                axis: "spatial extent",
                extent: padded,
                required: self.kernel,
            });
        }
        Ok((padded - self.kernel) / self.stride + 1)
    }

    /// Transposed-convolution output extent `(n - 1)s + k - 2p`.
    pub fn transposed_extent(&self, n: usize) -> Result<usize> {
        self.validate()?;
        if n == 0 {
            return Err(Error::TooSmall {
                axis: "spatial extent",
                extent: 0,
                required: 1,
            });
        }
        let full = (n - 1) * self.stride + self.kernel;
        if full <= 2 * self.padding {
            return Err(Error::TooSmall {
                axis: "transposed extent",
                extent: full,
                required: 2 * self.padding + 1,
            });
        }
        Ok(full - 2 * self.padding)
    }

    fn window(&self) -> usize {
        self.kernel * self.kernel
    }
}

/// Gradients of a (transposed) convolution with respect to its inputs.
#[derive(Clone, Debug)]
pub struct ConvGrads {
    pub input: Tensor,
    pub weight: Tensor,
    pub bias: Vec<f32>,
}

/// Window geometry shared by im2col / col2im. `(h, w)` is the image being
/// windowed, `(oh, ow)` the grid of window positions.
#[derive(Clone, Copy)]
struct Geometry {
    channels: usize,
    h: usize,
    w: usize,
    k: usize,
    s: usize,
    p: usize,
    oh: usize,
    ow: usize,
}

impl Geometry {
    #[inline]
    fn source(&self, o: usize, kk: usize, extent: usize) -> Option<usize> {
        let pos = o * self.s + kk;
        if pos < self.p || pos - self.p >= extent {
            None
        } else {
            Some(pos - self.p)
        }
    }
}

/// Gathers windows into a `(channels·k·k) × (oh·ow)` matrix; rows ordered (c, ky, kx).
fn im2col(x: &[f32], g: Geometry) -> Vec<f32> {
    let cols = g.oh * g.ow;
    let mut out = vec![0.0; g.channels * g.k * g.k * cols];
    let mut row = 0;
    for c in 0..g.channels {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let dst = &mut out[row * cols..(row + 1) * cols];
                for oy in 0..g.oh {
                    let Some(iy) = g.source(oy, ky, g.h) else {
                        continue;
                    };
                    let src_row = &plane[iy * g.w..(iy + 1) * g.w];
                    let dst_row = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    for (ox, d) in dst_row.iter_mut().enumerate() {
                        if let Some(ix) = g.source(ox, kx, g.w) {
                            *d = src_row[ix];
                        }
                    }
                }
                row += 1;
            }
        }
    }
    out
}

/// Scatter-adds a column matrix back onto the image. For each image element
/// the contributions arrive in ascending (ky, kx) order.
fn col2im(col: &[f32], g: Geometry) -> Vec<f32> {
    let cols = g.oh * g.ow;
    let mut out = vec![0.0; g.channels * g.h * g.w];
    let mut row = 0;
    for c in 0..g.channels {
        let plane = &mut out[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let src = &col[row * cols..(row + 1) * cols];
                for oy in 0..g.oh {
                    let Some(iy) = g.source(oy, ky, g.h) else {
                        continue;
                    };
                    for ox in 0..g.ow {
                        if let Some(ix) = g.source(ox, kx, g.w) {
                            plane[iy * g.w + ix] += src[oy * g.ow + ox];
                        }
                    }
                }
                row += 1;
            }
        }
    }
    out
}

fn add_bias(out: &mut [f32], bias: &[f32], plane: usize) {
    for (chunk, &b) in out.chunks_mut(plane).zip(bias) {
        for v in chunk {
            *v += b;
        }
    }
}

fn channel_sums(dy: &Tensor) -> Vec<f32> {
    let c = dy.channels();
    let plane = dy.plane_len();
    let mut sums = vec![0.0f32; c];
    for n in 0..dy.batch() {
        for (ci, chunk) in dy.sample(n).chunks(plane).enumerate() {
            sums[ci] += chunk.iter().sum::<f32>();
        }
    }
    sums
}

fn sum_in_order(parts: Vec<Vec<f32>>, len: usize) -> Vec<f32> {
    let mut acc = vec![0.0f32; len];
    for part in parts {
        for (a, p) in acc.iter_mut().zip(part) {
            *a += p;
        }
    }
    acc
}

fn check_conv_operands(input: &Tensor, weights: &Tensor, spec: &ConvSpec, transposed: bool) -> Result<()> {
    spec.validate()?;
    check_dim("input channels", spec.in_channels, input.channels())?;
    let [w0, w1, wk0, wk1] = weights.shape();
    let (expect0, expect1) = if transposed {
        (spec.in_channels, spec.out_channels)
    } else {
        (spec.out_channels, spec.in_channels)
    };
    check_dim("weight axis 0", expect0, w0)?;
    check_dim("weight axis 1", expect1, w1)?;
    check_dim("kernel height", spec.kernel, wk0)?;
    check_dim("kernel width", spec.kernel, wk1)?;
    Ok(())
}

fn conv_geometry(input: &Tensor, spec: &ConvSpec) -> Result<Geometry> {
    Ok(Geometry {
        channels: spec.in_channels,
        h: input.height(),
        w: input.width(),
        k: spec.kernel,
        s: spec.stride,
        p: spec.padding,
        oh: spec.output_extent(input.height())?,
        ow: spec.output_extent(input.width())?,
    })
}

fn deconv_geometry(input: &Tensor, spec: &ConvSpec) -> Result<Geometry> {
    Ok(Geometry {
        channels: spec.out_channels,
        h: spec.transposed_extent(input.height())?,
        w: spec.transposed_extent(input.width())?,
        k: spec.kernel,
        s: spec.stride,
        p: spec.padding,
        oh: input.height(),
        ow: input.width(),
    })
}

/// 2-D convolution: each output is `Σ_(ci,ky,kx) w·x + bias`.
pub fn conv2d(input: &Tensor, weights: &Tensor, bias: &[f32], spec: &ConvSpec) -> Result<Tensor> {
    check_conv_operands(input, weights, spec, false)?;
    check_dim("bias length", spec.out_channels, bias.len())?;
    let g = conv_geometry(input, spec)?;
    let pixels = g.oh * g.ow;
    let reduce = spec.in_channels * g.k * g.k;
    let outs = map_indexed(input.batch(), |n| {
        let col = im2col(input.sample(n), g);
        let mut out = vec![0.0; spec.out_channels * pixels];
        matmul(spec.out_channels, pixels, reduce, weights.data(), &col, &mut out);
        add_bias(&mut out, bias, pixels);
        out
    });
    Tensor::from_vec(
        [input.batch(), spec.out_channels, g.oh, g.ow],
        outs.concat(),
    )
}

pub fn conv2d_grad(
    input: &Tensor,
    weights: &Tensor,
    spec: &ConvSpec,
    upstream: &Tensor,
) -> Result<ConvGrads> {
    check_conv_operands(input, weights, spec, false)?;
    let g = conv_geometry(input, spec)?;
    check_dim("upstream batch", input.batch(), upstream.batch())?;
    check_dim("upstream channels", spec.out_channels, upstream.channels())?;
    check_dim("upstream height", g.oh, upstream.height())?;
    check_dim("upstream width", g.ow, upstream.width())?;

    let pixels = g.oh * g.ow;
    let reduce = spec.in_channels * spec.window();
    let co = spec.out_channels;
    let w_t = transpose(co, reduce, weights.data());
    let parts = map_indexed(input.batch(), |n| {
        let col = im2col(input.sample(n), g);
        let dy = upstream.sample(n);
        let mut dw = vec![0.0; co * reduce];
        matmul(co, reduce, pixels, dy, &transpose(reduce, pixels, &col), &mut dw);
        let mut dcol = vec![0.0; reduce * pixels];
        matmul(reduce, pixels, co, &w_t, dy, &mut dcol);
        (col2im(&dcol, g), dw)
    });
    let (dx, dw): (Vec<_>, Vec<_>) = parts.into_iter().unzip();
    Ok(ConvGrads {
        input: Tensor::from_vec(input.shape(), dx.concat())?,
        weight: Tensor::from_vec(weights.shape(), sum_in_order(dw, weights.len()))?,
        bias: channel_sums(upstream),
    })
}

/// Transposed convolution: scatters `x[ci]·w[ci, co]` windows with stride `s`,
/// the adjoint of [`conv2d`] with the same geometry.
pub fn deconv2d(input: &Tensor, weights: &Tensor, bias: &[f32], spec: &ConvSpec) -> Result<Tensor> {
    check_conv_operands(input, weights, spec, true)?;
    check_dim("bias length", spec.out_channels, bias.len())?;
    let g = deconv_geometry(input, spec)?;
    let rows = spec.out_channels * spec.window();
    let pixels = g.oh * g.ow;
    let w_t = transpose(spec.in_channels, rows, weights.data());
    let outs = map_indexed(input.batch(), |n| {
        let mut col = vec![0.0; rows * pixels];
        matmul(rows, pixels, spec.in_channels, &w_t, input.sample(n), &mut col);
        let mut out = col2im(&col, g);
        add_bias(&mut out, bias, g.h * g.w);
        out
    });
    Tensor::from_vec([input.batch(), spec.out_channels, g.h, g.w], outs.concat())
}

pub fn deconv2d_grad(
    input: &Tensor,
    weights: &Tensor,
    spec: &ConvSpec,
    upstream: &Tensor,
) -> Result<ConvGrads> {
    check_conv_operands(input, weights, spec, true)?;
    let g = deconv_geometry(input, spec)?;
    check_dim("upstream batch", input.batch(), upstream.batch())?;
    check_dim("upstream channels", spec.out_channels, upstream.channels())?;
    check_dim("upstream height", g.h, upstream.height())?;
    check_dim("upstream width", g.w, upstream.width())?;

    let rows = spec.out_channels * spec.window();
    let pixels = g.oh * g.ow;
    let ci = spec.in_channels;
    let parts = map_indexed(input.batch(), |n| {
        let dcol = im2col(upstream.sample(n), g);
        let mut dx = vec![0.0; ci * pixels];
        matmul(ci, pixels, rows, weights.data(), &dcol, &mut dx);
        let mut dw = vec![0.0; ci * rows];
        matmul(ci, rows, pixels, input.sample(n), &transpose(rows, pixels, &dcol), &mut dw);
        (dx, dw)
    });
    let (dx, dw): (Vec<_>, Vec<_>) = parts.into_iter().unzip();
    Ok(ConvGrads {
        input: Tensor::from_vec(input.shape(), dx.concat())?,
        weight: Tensor::from_vec(weights.shape(), sum_in_order(dw, weights.len()))?,
        bias: channel_sums(upstream),
    })
}

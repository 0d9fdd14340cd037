use crate::error::{check_dim, Error, Result};
use crate::tensor::Tensor;

/// Max-pool output plus, for every output element, the flat index into the
/// input tensor where the maximum was found.
#[derive(Clone, Debug)]
pub struct PoolRecord {
    pub output: Tensor,
    pub argmax: Vec<usize>,
    pub input_shape: [usize; 4],
    pub kernel: usize,
    pub stride: usize,
}

/// Unpadded max pooling. Ties resolve to the lowest flat input index.
pub fn maxpool(input: &Tensor, kernel: usize, stride: usize) -> Result<PoolRecord> {
    if kernel == 0 || stride == 0 {
        return Err(Error::Config("pool kernel and stride must be positive".into()));
    }
    let [n, c, h, w] = input.shape();
    for (axis, extent) in [("height", h), ("width", w)] {
        if extent < kernel {
            return Err(Error::TooSmall {
                axis,
                extent,
                required: kernel,
            });
        }
    }
    let oh = (h - kernel) / stride + 1;
    let ow = (w - kernel) / stride + 1;
    let mut output = Tensor::zeros([n, c, oh, ow]);
    let mut argmax = Vec::with_capacity(output.len());
    let data = input.data();
    let out = output.data_mut();
    let mut o = 0;
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + oy * stride * w + ox * stride;
                let mut best_val = data[best];
                for ky in 0..kernel {
                    let row = base + (oy * stride + ky) * w + ox * stride;
                    for kx in 0..kernel {
                        let v = data[row + kx];
                        if v > best_val {
                            best_val = v;
                            best = row + kx;
                        }
                    }
                }
                out[o] = best_val;
                argmax.push(best);
                o += 1;
            }
        }
    }
    Ok(PoolRecord {
        output,
        argmax,
        input_shape: input.shape(),
        kernel,
        stride,
    })
}

/// Routes each upstream value to its recorded argmax; overlapping windows accumulate.
pub fn maxpool_grad(record: &PoolRecord, upstream: &Tensor) -> Result<Tensor> {
    let want = record.output.shape();
    let got = upstream.shape();
    for (axis, (a, b)) in ["batch", "channels", "height", "width"].into_iter().zip(want.into_iter().zip(got)) {
        check_dim(axis, a, b)?;
    }
    let mut grad = Tensor::zeros(record.input_shape);
    let g = grad.data_mut();
    for (&idx, &u) in record.argmax.iter().zip(upstream.data()) {
        g[idx] += u;
    }
    Ok(grad)
}

use crate::error::{check_dim, Error, Result};
use crate::tensor::Tensor;

/// Probabilities below this are clamped before taking the log.
pub const PROB_FLOOR: f32 = 1e-12;

fn check_targets(probs: &Tensor, targets: &[u8]) -> Result<()> {
    check_dim(
        "target pixels",
        probs.batch() * probs.plane_len(),
        targets.len(),
    )?;
    let classes = probs.channels();
    if let Some(&bad) = targets.iter().find(|&&t| t as usize >= classes) {
        return Err(Error::Class {
            index: bad as usize,
            num_classes: classes,
        });
    }
    Ok(())
}

/// Mean negative log-likelihood of the target class over batch and pixels,
/// with the gradient with respect to `probs`.
///
/// `targets` is laid out (N, H, W).
pub fn cross_entropy_loss(probs: &Tensor, targets: &[u8]) -> Result<(f32, Tensor)> {
    check_targets(probs, targets)?;
    let plane = probs.plane_len();
    let count = targets.len() as f32;
    let mut grad = Tensor::zeros(probs.shape());
    let mut total = 0.0f64;
    for n in 0..probs.batch() {
        let p = probs.sample(n);
        let g = grad.sample_mut(n);
        for px in 0..plane {
            let t = targets[n * plane + px] as usize;
            let k = t * plane + px;
            let pt = p[k];
            if pt > PROB_FLOOR {
                total -= f64::from(pt.ln());
                g[k] = -1.0 / (count * pt);
            } else {
                total -= f64::from(PROB_FLOOR.ln());
            }
        }
    }
    Ok(((total / f64::from(count)) as f32, grad))
}

/// Gradient of the mean cross entropy with respect to the logits that fed
/// `softmax_channels`: `(p - onehot) / count`.
pub fn softmax_cross_entropy_grad(probs: &Tensor, targets: &[u8]) -> Result<Tensor> {
    check_targets(probs, targets)?;
    let plane = probs.plane_len();
    let count = targets.len() as f32;
    let mut grad = probs.map(|p| p / count);
    for n in 0..probs.batch() {
        let g = grad.sample_mut(n);
        for px in 0..plane {
            let t = targets[n * plane + px] as usize;
            g[t * plane + px] -= 1.0 / count;
        }
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::{softmax_channels, softmax_channels_grad};

    #[test]
    fn perfect_prediction_zero_loss() {
        let probs = Tensor::from_fn([2, 3, 2, 2], |_, c, _, _| if c == 1 { 1.0 } else { 0.0 });
        let (loss, _) = cross_entropy_loss(&probs, &[1; 8]).unwrap();
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn uniform_prediction_is_ln3() {
        let probs = Tensor::full([1, 3, 4, 4], 1.0 / 3.0);
        let targets: Vec<u8> = (0..16).map(|i| (i % 3) as u8).collect();
        let (loss, _) = cross_entropy_loss(&probs, &targets).unwrap();
        assert!((loss - 3f32.ln()).abs() < 1e-6);
    }

    #[test]
    fn out_of_range_target() {
        let probs = Tensor::full([1, 3, 1, 2], 1.0 / 3.0);
        assert!(matches!(cross_entropy_loss(&probs, &[0, 3]), Err(Error::Class { index: 3, .. })));
        assert!(matches!(cross_entropy_loss(&probs, &[0]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn fused_grad_matches_composition() {
        let logits = Tensor::from_fn([2, 3, 3, 3], |n, c, h, w| ((n * 31 + c * 7 + h * 3 + w) % 5) as f32 * 0.4 - 0.8);
        let targets: Vec<u8> = (0..18).map(|i| ((i * 7) % 3) as u8).collect();
        let probs = softmax_channels(&logits);
        let (_, dp) = cross_entropy_loss(&probs, &targets).unwrap();
        let composed = softmax_channels_grad(&probs, &dp).unwrap();
        let fused = softmax_cross_entropy_grad(&probs, &targets).unwrap();
        assert!(composed.max_abs_diff(&fused) < 1e-6);
    }
}

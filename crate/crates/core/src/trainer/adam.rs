use std::collections::HashMap;

use crate::error::{check_dim, Error, Result};
use crate::unet::{Gradients, ParamKind, UNetModel};

use super::TrainConfig;

/// Adam moment accumulators keyed by parameter name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub first: HashMap<String, Vec<f32>>,
    pub second: HashMap<String, Vec<f32>>,
}

/// Bias-corrected Adam update of one parameter slice. `t` is the 1-based step.
pub fn adam_update(
    param: &mut [f32],
    grad: &[f32],
    m: &mut [f32],
    v: &mut [f32],
    t: u64,
    config: &TrainConfig,
) -> Result<()> {
    check_dim("gradient length", param.len(), grad.len())?;
    check_dim("moment length", param.len(), m.len())?;
    check_dim("moment length", param.len(), v.len())?;
    let (b1, b2) = (config.beta1, config.beta2);
    let c1 = 1.0 - f64::from(b1).powi(t as i32);
    let c2 = 1.0 - f64::from(b2).powi(t as i32);
    let lr = config.learning_rate;
    for i in 0..param.len() {
        let g = grad[i];
        m[i] = b1 * m[i] + (1.0 - b1) * g;
        v[i] = b2 * v[i] + (1.0 - b2) * g * g;
        let m_hat = f64::from(m[i]) / c1;
        let v_hat = f64::from(v[i]) / c2;
        param[i] -= (f64::from(lr) * m_hat / (v_hat.sqrt() + f64::from(config.adam_epsilon))) as f32;
    }
    Ok(())
}

/// One Adam step over every trainable parameter of `model`.
pub fn adam_step(model: &mut UNetModel, grads: &Gradients, state: &mut AdamState, config: &TrainConfig) -> Result<()> {
    if !(config.learning_rate.is_finite() && config.learning_rate >= 0.0) {
        return Err(Error::Config(format!("learning rate {} is invalid", config.learning_rate)));
    }
    for b in [config.beta1, config.beta2] {
        if !(0.0..1.0).contains(&b) {
            return Err(Error::Config(format!("Adam beta {b} is outside [0, 1)")));
        }
    }
    state.step += 1;
    for p in model.params_mut() {
        if p.kind != ParamKind::Trainable {
            continue;
        }
        let g = grads
            .get(&p.name)
            .ok_or_else(|| Error::Config(format!("no gradient for parameter {}", p.name)))?;
        let n = p.data.len();
        let m = state.first.entry(p.name.clone()).or_insert_with(|| vec![0.0; n]);
        let v = state.second.entry(p.name).or_insert_with(|| vec![0.0; n]);
        adam_update(p.data, g, m, v, state.step, config)?;
    }
    Ok(())
}

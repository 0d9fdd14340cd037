use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::reference::{self, Arr, Params};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::unet::{ParamKind, UNetConfig, UNetModel};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradCheckConfig {
    pub input_size: usize,
    pub base_channels: usize,
    pub batch: usize,
    /// Parameters sampled per layer kind.
    pub samples_per_kind: usize,
    /// Central-difference step.
    pub step: f64,
    /// Floor on the denominator of the relative error.
    pub abs_floor: f64,
    pub tolerance: f64,
    pub seed: u64,
    /// Feed an all-zero batch instead of random pixels.
    pub zero_input: bool,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            input_size: 32,
            base_channels: 4,
            batch: 4,
            samples_per_kind: 20,
            step: 1e-3,
            abs_floor: 1e-5,
            tolerance: 1e-2,
            seed: 0,
            zero_input: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradCheckEntry {
    pub kind: String,
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub config: GradCheckConfig,
    pub entries: Vec<GradCheckEntry>,
    /// Largest relative error per layer kind.
    pub per_kind: BTreeMap<String, f64>,
    pub max_rel_err: f64,
    pub worst: Option<GradCheckEntry>,
    pub all_finite: bool,
    pub passed: bool,
}

fn layer_kind(name: &str) -> &'static str {
    let suffix = |s: &str| name.ends_with(s);
    if name.starts_with("head.") {
        if suffix(".weight") {
            "head.weight"
        } else {
            "head.bias"
        }
    } else if name.contains(".up.") {
        if suffix(".bn.scale") {
            "bn.scale"
        } else if suffix(".bn.shift") {
            "bn.shift"
        } else if suffix(".weight") {
            "deconv.weight"
        } else {
            "deconv.bias"
        }
    } else if suffix(".bn.scale") {
        "bn.scale"
    } else if suffix(".bn.shift") {
        "bn.shift"
    } else if suffix(".weight") {
        "conv.weight"
    } else {
        "conv.bias"
    }
}

/// The perturbed model, batch and targets a check with `config` runs on.
fn setup(config: &GradCheckConfig) -> Result<(UNetModel, Tensor, Vec<u8>, ChaCha8Rng)> {
    let mut model = UNetModel::init(UNetConfig::new(config.input_size, config.base_channels), config.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x9e37_79b9);
    // Move away from the symmetric init (zero biases, unit scales).
    for p in model.params_mut() {
        if p.kind != ParamKind::Trainable {
            continue;
        }
        let kind = layer_kind(&p.name);
        for v in p.data.iter_mut() {
            match kind {
                "bn.scale" => *v = rng.gen_range(0.5..1.5),
                "bn.shift" | "conv.bias" | "deconv.bias" | "head.bias" => *v = rng.gen_range(-0.2..0.2),
                _ => {}
            }
        }
    }

    let s = config.input_size;
    let n = config.batch;
    let x = if config.zero_input {
        Tensor::zeros([n, 3, s, s])
    } else {
        Tensor::from_fn([n, 3, s, s], |_, _, _, _| rng.gen_range(0.0..1.0))
    };
    let targets: Vec<u8> = (0..n * s * s).map(|_| rng.gen_range(0..3)).collect();

    Ok((model, x, targets, rng))
}

/// Compares the model's analytic gradients against central differences of an
/// independent f64 forward pass, on a small randomly perturbed model. The
/// reference follows the leaky-ReLU branches and pooling maxima of the f32
/// pass, so the differences never straddle a kink.
pub fn grad_check(config: &GradCheckConfig) -> Result<GradCheckReport> {
    if config.samples_per_kind == 0 || config.batch == 0 || config.step.is_nan() || config.step <= 0.0 {
        return Err(Error::Config("grad check needs samples, a batch and a positive step".into()));
    }
    let ucfg = UNetConfig::new(config.input_size, config.base_channels);
    let (model, x, targets, mut rng) = setup(config)?;
    let step = model.clone().forward_train(&x, &targets)?;
    let pattern = model.branch_pattern(&x)?;
    let all_finite = step.loss.is_finite() && step.grads.is_finite();

    let mut params: Params = model
        .params()
        .into_iter()
        .filter(|p| p.kind == ParamKind::Trainable)
        .map(|p| (p.name, (p.dims, p.data.iter().map(|&v| f64::from(v)).collect())))
        .collect();
    let eps = f64::from(model.encoder[0].first.bn.epsilon);
    let xr = Arr::new(x.shape(), x.data().iter().map(|&v| f64::from(v)).collect());

    let mut by_kind: BTreeMap<&'static str, Vec<(String, usize)>> = BTreeMap::new();
    let mut names: Vec<&String> = params.keys().collect();
    names.sort();
    for name in names {
        let len = params[name].1.len();
        by_kind
            .entry(layer_kind(name))
            .or_default()
            .extend((0..len).map(|i| (name.clone(), i)));
    }

    let mut entries = Vec::new();
    for (kind, pool) in &by_kind {
        for _ in 0..config.samples_per_kind {
            let (name, index) = pool[rng.gen_range(0..pool.len())].clone();
            let analytic = f64::from(
                step.grads
                    .get(&name)
                    .ok_or_else(|| Error::Config(format!("no gradient for {name}")))?[index],
            );
            let orig = params[&name].1[index];
            params.get_mut(&name).unwrap().1[index] = orig + config.step;
            let up = reference::loss(&ucfg, &params, &pattern, eps, &xr, &targets);
            params.get_mut(&name).unwrap().1[index] = orig - config.step;
            let down = reference::loss(&ucfg, &params, &pattern, eps, &xr, &targets);
            params.get_mut(&name).unwrap().1[index] = orig;
            let numeric = (up - down) / (2.0 * config.step);
            let rel_err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(config.abs_floor);
            entries.push(GradCheckEntry {
                kind: kind.to_string(),
                param: name,
                index,
                analytic,
                numeric,
                rel_err,
            });
        }
    }

    let mut per_kind = BTreeMap::new();
    for e in &entries {
        let m = per_kind.entry(e.kind.clone()).or_insert(0.0f64);
        *m = m.max(e.rel_err);
    }
    let worst = entries
        .iter()
        .max_by(|a, b| a.rel_err.total_cmp(&b.rel_err))
        .cloned();
    let max_rel_err = worst.as_ref().map_or(0.0, |w| w.rel_err);
    Ok(GradCheckReport {
        config: config.clone(),
        passed: all_finite && max_rel_err <= config.tolerance,
        entries,
        per_kind,
        max_rel_err,
        worst,
        all_finite,
    })
}

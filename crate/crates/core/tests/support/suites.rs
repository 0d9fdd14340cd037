//! Kernel oracle and finite-difference suites that report instead of
//! asserting, so both the kernel tests and the acceptance run can use them.

#![allow(dead_code)]

use rand::{seq::SliceRandom, Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::oracles::*;
use unet_cd::ops::*;
use unet_cd::Tensor;

pub const STEP: f64 = 1e-3;
pub const KERNEL_TOL: f64 = 1e-3;
pub const FLOOR: f64 = 1e-5;

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: [usize; 4]) -> Tensor {
    Tensor::from_fn(shape, |_, _, _, _| rng.gen_range(-1.0..1.0))
}

pub fn random_vec(rng: &mut ChaCha8Rng, len: usize) -> Vec<f32> {
    (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Tie-free input: a random permutation of well-separated levels.
pub fn distinct_tensor(rng: &mut ChaCha8Rng, shape: [usize; 4]) -> Tensor {
    let len: usize = shape.iter().product();
    let mut levels: Vec<f32> = (0..len).map(|i| i as f32 * 0.01 - len as f32 * 0.005).collect();
    levels.shuffle(rng);
    Tensor::from_vec(shape, levels).unwrap()
}

/// Index of the first element whose bits differ, if any.
pub fn first_bit_difference(a: &Tensor, b: &Tensor) -> Option<usize> {
    if a.shape() != b.shape() {
        return Some(0);
    }
    a.data().iter().zip(b.data()).position(|(x, y)| x.to_bits() != y.to_bits())
}

#[derive(Clone, Debug)]
pub struct OracleOutcome {
    pub name: &'static str,
    pub cases: usize,
    pub mismatched: usize,
    pub first: Option<String>,
}

impl OracleOutcome {
    fn new(name: &'static str) -> Self {
        OracleOutcome { name, cases: 0, mismatched: 0, first: None }
    }

    fn record(&mut self, diff: Option<String>) {
        self.cases += 1;
        if let Some(d) = diff {
            self.mismatched += 1;
            self.first.get_or_insert(d);
        }
    }
}

pub fn conv2d_oracle(seed: u64, cases: usize) -> OracleOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = OracleOutcome::new("conv2d");
    for case in 0..cases {
        let k = rng.gen_range(1..=3);
        let spec = ConvSpec::new(rng.gen_range(1..=4), rng.gen_range(1..=5), k, rng.gen_range(1..=3), rng.gen_range(0..k));
        let shape = [rng.gen_range(1..=3), spec.in_channels, rng.gen_range(k..=9), rng.gen_range(k..=9)];
        let x = random_tensor(&mut rng, shape);
        let w = random_tensor(&mut rng, [spec.out_channels, spec.in_channels, k, k]);
        let b = random_vec(&mut rng, spec.out_channels);
        let got = conv2d(&x, &w, &b, &spec).unwrap();
        let want = tensor(&conv2d_ref(&arr32(&x), &arr32(&w), &b, &spec));
        out.record(first_bit_difference(&got, &want).map(|i| format!("case {case} {spec:?} element {i}")));
    }
    out
}

pub fn deconv2d_oracle(seed: u64, cases: usize) -> OracleOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = OracleOutcome::new("deconv2d");
    while out.cases < cases {
        let k = rng.gen_range(1..=3);
        let s = rng.gen_range(1..=3);
        let spec = ConvSpec::new(rng.gen_range(1..=4), rng.gen_range(1..=5), k, s, rng.gen_range(0..k));
        let shape = [rng.gen_range(1..=3), spec.in_channels, rng.gen_range(2..=7), rng.gen_range(2..=7)];
        if spec.transposed_extent(shape[2]).is_err() || spec.transposed_extent(shape[3]).is_err() {
            continue;
        }
        let x = random_tensor(&mut rng, shape);
        let w = random_tensor(&mut rng, [spec.in_channels, spec.out_channels, k, k]);
        let b = random_vec(&mut rng, spec.out_channels);
        let got = deconv2d(&x, &w, &b, &spec).unwrap();
        let want = tensor(&deconv2d_ref(&arr32(&x), &arr32(&w), &b, &spec));
        let case = out.cases;
        out.record(first_bit_difference(&got, &want).map(|i| format!("case {case} {spec:?} element {i}")));
    }
    out
}

pub fn maxpool_oracle(seed: u64, cases: usize) -> OracleOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = OracleOutcome::new("maxpool");
    for case in 0..cases {
        let k = rng.gen_range(1..=3);
        let s = rng.gen_range(1..=3);
        let shape = [rng.gen_range(1..=3), rng.gen_range(1..=4), rng.gen_range(k..=9), rng.gen_range(k..=9)];
        // Coarse values so ties actually occur.
        let x = Tensor::from_fn(shape, |_, _, _, _| rng.gen_range(0..4) as f32);
        let rec = maxpool(&x, k, s).unwrap();
        let (want, idx) = maxpool_ref(&arr32(&x), k, s);
        let diff = first_bit_difference(&rec.output, &tensor(&want))
            .map(|i| format!("case {case} element {i}"))
            .or_else(|| (rec.argmax != idx).then(|| format!("case {case} argmax")));
        out.record(diff);
    }
    out
}

#[derive(Clone, Debug)]
pub struct GradOutcome {
    pub name: &'static str,
    pub checked: usize,
    pub worst: f64,
    pub detail: String,
}

impl GradOutcome {
    pub fn passed(&self, tol: f64) -> bool {
        self.worst <= tol
    }

    fn merge(&mut self, other: GradOutcome) {
        self.checked += other.checked;
        if other.worst > self.worst {
            self.worst = other.worst;
            self.detail = other.detail;
        }
    }
}

/// Folds outcomes with equal names into one, keeping the worst.
pub fn merged(outcomes: Vec<GradOutcome>) -> Vec<GradOutcome> {
    let mut out: Vec<GradOutcome> = Vec::new();
    for o in outcomes {
        match out.iter_mut().find(|x| x.name == o.name) {
            Some(x) => x.merge(o),
            None => out.push(o),
        }
    }
    out
}

/// Compares `analytic` against central differences of the double-precision
/// reference `f`, evaluated around `point`.
pub fn check_grad(
    name: &'static str,
    analytic: &[f32],
    point: &[f32],
    indices: &[usize],
    mut f: impl FnMut(&[f64]) -> f64,
) -> GradOutcome {
    let mut data: Vec<f64> = point.iter().map(|&v| f64::from(v)).collect();
    let mut out = GradOutcome { name, checked: 0, worst: 0.0, detail: String::new() };
    for &i in indices {
        let numeric = central_diff(&mut data, i, STEP, &mut f);
        let e = rel_err(f64::from(analytic[i]), numeric, FLOOR);
        out.checked += 1;
        if e >= out.worst {
            out.worst = e;
            out.detail = format!("{name}[{i}]: analytic {} numeric {numeric}", analytic[i]);
        }
    }
    out
}

pub fn all(len: usize) -> Vec<usize> {
    (0..len).collect()
}

fn f64s(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| f64::from(x)).collect()
}

pub fn conv2d_grad_case(rng: &mut ChaCha8Rng, spec: ConvSpec, shape: [usize; 4]) -> Vec<GradOutcome> {
    let k = spec.kernel;
    let x = random_tensor(rng, shape);
    let w = random_tensor(rng, [spec.out_channels, spec.in_channels, k, k]);
    let b = random_vec(rng, spec.out_channels);
    let y = conv2d(&x, &w, &b, &spec).unwrap();
    let r = random_tensor(rng, y.shape());
    let g = conv2d_grad(&x, &w, &spec, &r).unwrap();
    let (x64, w64, b64) = (arr64(&x), arr64(&w), f64s(&b));
    vec![
        check_grad("conv2d input", g.input.data(), x.data(), &all(x.len()), |d| {
            project(&conv2d_ref(&with_data(x.shape(), d), &w64, &b64, &spec), &r)
        }),
        check_grad("conv2d weight", g.weight.data(), w.data(), &all(w.len()), |d| {
            project(&conv2d_ref(&x64, &with_data(w.shape(), d), &b64, &spec), &r)
        }),
        check_grad("conv2d bias", &g.bias, &b, &all(b.len()), |d| project(&conv2d_ref(&x64, &w64, d, &spec), &r)),
    ]
}

pub fn conv2d_grads(seed: u64, cases: usize) -> Vec<GradOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for _ in 0..cases {
        let k = rng.gen_range(1..=3);
        let spec = ConvSpec::new(rng.gen_range(1..=3), rng.gen_range(1..=3), k, rng.gen_range(1..=2), rng.gen_range(0..k));
        let shape = [2, spec.in_channels, 5, 5];
        out.extend(conv2d_grad_case(&mut rng, spec, shape));
    }
    merged(out)
}

pub fn deconv2d_grads(seed: u64, cases: usize) -> Vec<GradOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for _ in 0..cases {
        let k = rng.gen_range(2..=3);
        let spec = ConvSpec::new(rng.gen_range(1..=3), rng.gen_range(1..=3), k, rng.gen_range(1..=2), rng.gen_range(0..k));
        let x = random_tensor(&mut rng, [2, spec.in_channels, 3, 4]);
        let w = random_tensor(&mut rng, [spec.in_channels, spec.out_channels, k, k]);
        let b = random_vec(&mut rng, spec.out_channels);
        let y = deconv2d(&x, &w, &b, &spec).unwrap();
        let r = random_tensor(&mut rng, y.shape());
        let g = deconv2d_grad(&x, &w, &spec, &r).unwrap();
        let (x64, w64, b64) = (arr64(&x), arr64(&w), f64s(&b));
        out.push(check_grad("deconv2d input", g.input.data(), x.data(), &all(x.len()), |d| {
            project(&deconv2d_ref(&with_data(x.shape(), d), &w64, &b64, &spec), &r)
        }));
        out.push(check_grad("deconv2d weight", g.weight.data(), w.data(), &all(w.len()), |d| {
            project(&deconv2d_ref(&x64, &with_data(w.shape(), d), &b64, &spec), &r)
        }));
        out.push(check_grad("deconv2d bias", &g.bias, &b, &all(b.len()), |d| {
            project(&deconv2d_ref(&x64, &w64, d, &spec), &r)
        }));
    }
    merged(out)
}

pub fn maxpool_grads(seed: u64, cases: usize) -> Vec<GradOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for _ in 0..cases {
        let x = distinct_tensor(&mut rng, [2, 2, 7, 7]);
        let rec = maxpool(&x, 3, 2).unwrap();
        let r = random_tensor(&mut rng, rec.output.shape());
        let g = maxpool_grad(&rec, &r).unwrap();
        out.push(check_grad("maxpool input", g.data(), x.data(), &all(x.len()), |d| {
            project(&maxpool_ref(&with_data(x.shape(), d), 3, 2).0, &r)
        }));
    }
    merged(out)
}

pub fn batchnorm_grads(seed: u64, cases: usize) -> Vec<GradOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for _ in 0..cases {
        let x = random_tensor(&mut rng, [3, 2, 3, 3]);
        let mut state = BatchNormState::new(2);
        state.scale = random_vec(&mut rng, 2);
        state.shift = random_vec(&mut rng, 2);
        let base = state.clone();
        let (y, cache) = batchnorm_train(&x, &mut state).unwrap();
        let r = random_tensor(&mut rng, y.shape());
        let g = batchnorm_grad(&cache, &base, &r).unwrap();
        let eps = f64::from(base.epsilon);
        let (x64, sc, sh) = (arr64(&x), f64s(&base.scale), f64s(&base.shift));
        out.push(check_grad("batchnorm input", g.input.data(), x.data(), &all(x.len()), |d| {
            project(&batchnorm_ref(&with_data(x.shape(), d), &sc, &sh, eps), &r)
        }));
        out.push(check_grad("batchnorm scale", &g.scale, &base.scale, &[0, 1], |d| {
            project(&batchnorm_ref(&x64, d, &sh, eps), &r)
        }));
        out.push(check_grad("batchnorm shift", &g.shift, &base.shift, &[0, 1], |d| {
            project(&batchnorm_ref(&x64, &sc, d, eps), &r)
        }));
    }
    merged(out)
}

pub fn leaky_relu_grads(seed: u64) -> GradOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Keep clear of the kink at zero.
    let x = Tensor::from_fn([2, 3, 4, 4], |_, _, _, _| {
        let v: f32 = rng.gen_range(0.01..1.0);
        if rng.gen_bool(0.5) {
            v
        } else {
            -v
        }
    });
    let r = random_tensor(&mut rng, x.shape());
    let g = leaky_relu_grad(&x, &r, LEAKY_SLOPE).unwrap();
    check_grad("leaky relu", g.data(), x.data(), &all(x.len()), |d| {
        project(&leaky_ref(&with_data(x.shape(), d), 0.2), &r)
    })
}

pub fn softmax_grads(seed: u64) -> GradOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = random_tensor(&mut rng, [2, 3, 3, 3]);
    let r = random_tensor(&mut rng, x.shape());
    let g = softmax_channels_grad(&softmax_channels(&x), &r).unwrap();
    check_grad("softmax", g.data(), x.data(), &all(x.len()), |d| project(&softmax_ref(&with_data(x.shape(), d)), &r))
}

pub fn cross_entropy_grads(seed: u64) -> Vec<GradOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let probs = softmax_channels(&random_tensor(&mut rng, [2, 3, 3, 3]));
    let targets: Vec<u8> = (0..18).map(|_| rng.gen_range(0..3)).collect();
    let (_, g) = cross_entropy_loss(&probs, &targets).unwrap();
    let plain = check_grad("cross entropy", g.data(), probs.data(), &all(probs.len()), |d| {
        cross_entropy_ref(&with_data(probs.shape(), d), &targets)
    });
    // Fused softmax + cross-entropy against differences on the logits.
    let logits = random_tensor(&mut rng, [1, 3, 4, 4]);
    let t16: Vec<u8> = (0..16).map(|_| rng.gen_range(0..3)).collect();
    let fused = softmax_cross_entropy_grad(&softmax_channels(&logits), &t16).unwrap();
    let fused = check_grad("softmax cross entropy", fused.data(), logits.data(), &all(logits.len()), |d| {
        cross_entropy_ref(&softmax_ref(&with_data(logits.shape(), d)), &t16)
    });
    vec![plain, fused]
}

/// Layer name, channels and extent for a 320×320 input with 64 base kernels.
#[rustfmt::skip]
pub const FULL_SCALE_TRACE: &[(&str, usize, usize)] = &[
    ("input", 3, 320),
    ("enc1.conv1", 64, 320), ("enc1.conv2", 64, 320), ("enc1.pool", 64, 159),
    ("enc2.conv1", 128, 159), ("enc2.conv2", 128, 159), ("enc2.pool", 128, 79),
    ("enc3.conv1", 256, 79), ("enc3.conv2", 256, 79), ("enc3.pool", 256, 39),
    ("enc4.conv1", 512, 39), ("enc4.conv2", 512, 39), ("enc4.pool", 512, 19),
    ("enc5.conv1", 1024, 19), ("enc5.conv2", 1024, 19),
    ("dec4.up", 512, 39), ("dec4.fit", 512, 39), ("dec4.concat", 1024, 39), ("dec4.conv1", 512, 39), ("dec4.conv2", 512, 39),
    ("dec3.up", 256, 79), ("dec3.fit", 256, 79), ("dec3.concat", 512, 79), ("dec3.conv1", 256, 79), ("dec3.conv2", 256, 79),
    ("dec2.up", 128, 159), ("dec2.fit", 128, 159), ("dec2.concat", 256, 159), ("dec2.conv1", 128, 159), ("dec2.conv2", 128, 159),
    ("dec1.up", 64, 319), ("dec1.fit", 64, 320), ("dec1.concat", 128, 320), ("dec1.conv1", 64, 320), ("dec1.conv2", 64, 320),
    ("head", 3, 320), ("softmax", 3, 320),
];

/// Every differentiable kernel, with fixed seeds.
pub fn kernel_grad_suite() -> Vec<GradOutcome> {
    let mut out = conv2d_grads(10, 8);
    out.extend(deconv2d_grads(12, 8));
    out.extend(maxpool_grads(14, 5));
    out.extend(batchnorm_grads(15, 4));
    out.push(leaky_relu_grads(16));
    out.push(softmax_grads(17));
    out.extend(cross_entropy_grads(18));
    out
}

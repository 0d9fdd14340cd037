use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{UNetConfig, POOL_KERNEL, POOL_STRIDE};
use super::layers::{Conv, ConvBlock, ConvBlockCache, Gradients, ParamKind, ParamMut, ParamRef};
use crate::error::{check_dim, Error, Result};
use crate::ops::{
    conv2d_grad, cross_entropy_loss, maxpool, maxpool_grad, softmax_channels,
    softmax_cross_entropy_grad, ConvSpec, Mode, PoolRecord,
};
use crate::synthdata::NormalizationStats;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderLevel {
    pub first: ConvBlock,
    pub second: ConvBlock,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecoderLevel {
    pub up: ConvBlock,
    pub first: ConvBlock,
    pub second: ConvBlock,
}

/// Per-level encoder feature maps: levels 1–4 are the second conv block's
/// output before pooling, level 5 is the bridge output.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderTaps {
    pub levels: Vec<Tensor>,
}

impl EncoderTaps {
    /// The four skip tensors, level 1 first.
    pub fn skips(&self) -> &[Tensor] {
        &self.levels[..self.levels.len() - 1]
    }

    pub fn bridge(&self) -> &Tensor {
        self.levels.last().unwrap()
    }
}

/// The five-level U-net together with the input normalization it was trained with.
#[derive(Clone, Debug, PartialEq)]
pub struct UNetModel {
    pub config: UNetConfig,
    /// Levels 1–5; the last entry is the bridge.
    pub encoder: Vec<EncoderLevel>,
    /// `decoder[l - 1]` upsamples into level `l`; runs from index 3 down to 0.
    pub decoder: Vec<DecoderLevel>,
    /// Final 3×3 convolution to class logits.
    pub head: Conv,
    pub norm: NormalizationStats,
}

/// The piecewise-linear branch choices of one train-mode forward pass:
/// leaky-ReLU active flags per conv block and pooling argmax per level.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BranchPattern {
    pub active: HashMap<String, Vec<bool>>,
    pub pool_argmax: Vec<Vec<usize>>,
}

/// Result of one training forward/backward pass.
pub struct TrainStep {
    pub loss: f32,
    pub grads: Gradients,
    pub probs: Tensor,
}

fn conv_spec(cin: usize, cout: usize) -> ConvSpec {
    ConvSpec::new(cin, cout, 3, 1, 1)
}

fn up_spec(cin: usize, cout: usize) -> ConvSpec {
    ConvSpec::new(cin, cout, 3, 2, 0)
}

impl UNetModel {
    /// Fresh model with fan-in-scaled uniform weights, zero biases and
    /// identity batch-norm affine parameters.
    pub fn init(config: UNetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let slope = config.leaky_slope;
        let mut encoder = Vec::with_capacity(config.levels);
        let mut cin = config.input_channels;
        for level in 1..=config.levels {
            let c = config.level_channels(level);
            encoder.push(EncoderLevel {
                first: ConvBlock::init(conv_spec(cin, c), false, slope, &mut rng),
                second: ConvBlock::init(conv_spec(c, c), false, slope, &mut rng),
            });
            cin = c;
        }
        let mut decoder: Vec<DecoderLevel> = Vec::with_capacity(config.levels - 1);
        for level in (1..config.levels).rev() {
            let c = config.level_channels(level);
            decoder.push(DecoderLevel {
                up: ConvBlock::init(up_spec(2 * c, c), true, slope, &mut rng),
                first: ConvBlock::init(conv_spec(2 * c, c), false, slope, &mut rng),
                second: ConvBlock::init(conv_spec(c, c), false, slope, &mut rng),
            });
        }
        decoder.reverse();
        // Output layer feeds a softmax, so it gets a smaller (unit-gain, 1/√3) scale.
        let head = Conv::init(
            conv_spec(config.base_channels, config.num_classes),
            false,
            1.0 / 3f32.sqrt(),
            &mut rng,
        );
        let norm = NormalizationStats::unit_range(config.input_channels);
        Ok(UNetModel {
            config,
            encoder,
            decoder,
            head,
            norm,
        })
    }

    /// Expected shape of the level-`level` tap for a batch of `n`.
    pub fn tap_shape(&self, level: usize, n: usize) -> Result<[usize; 4]> {
        let e = self.config.level_extents()?[level - 1];
        Ok([n, self.config.level_channels(level), e, e])
    }

    fn check_image(&self, image: &Tensor) -> Result<()> {
        check_dim("image channels", self.config.input_channels, image.channels())?;
        check_dim("image height", self.config.input_size, image.height())?;
        check_dim("image width", self.config.input_size, image.width())?;
        if image.batch() == 0 {
            return Err(Error::Degenerate("empty batch".into()));
        }
        Ok(())
    }

    fn check_decoder_inputs(&self, skips: &[Tensor], bridge: &Tensor) -> Result<()> {
        check_dim("skip count", self.config.levels - 1, skips.len())?;
        let n = bridge.batch();
        for (i, t) in skips.iter().chain(std::iter::once(bridge)).enumerate() {
            let want = self.tap_shape(i + 1, n)?;
            let got = t.shape();
            for (axis, a) in ["batch", "channels", "height", "width"].into_iter().enumerate() {
                check_dim(a, want[axis], got[axis])?;
            }
        }
        Ok(())
    }

    /// Eval-mode encoder: the five level taps of `image`.
    pub fn encode(&self, image: &Tensor) -> Result<EncoderTaps> {
        self.encode_traced(image, &mut |_, _| {})
    }

    fn encode_traced(&self, image: &Tensor, trace: &mut dyn FnMut(String, [usize; 4])) -> Result<EncoderTaps> {
        self.check_image(image)?;
        let slope = self.config.leaky_slope;
        let mut levels = Vec::with_capacity(self.config.levels);
        let mut x = image.clone();
        trace("input".into(), x.shape());
        for (i, level) in self.encoder.iter().enumerate() {
            let y1 = level.first.eval(&x, slope)?;
            trace(format!("enc{}.conv1", i + 1), y1.shape());
            let tap = level.second.eval(&y1, slope)?;
            trace(format!("enc{}.conv2", i + 1), tap.shape());
            if i + 1 < self.encoder.len() {
                x = maxpool(&tap, POOL_KERNEL, POOL_STRIDE)?.output;
                trace(format!("enc{}.pool", i + 1), x.shape());
            }
            levels.push(tap);
        }
        Ok(EncoderTaps { levels })
    }

    /// Eval-mode decoder: per-pixel class probabilities from skip tensors and
    /// a bridge tensor (normally this model's own taps).
    pub fn decode(&self, skips: &[Tensor], bridge: &Tensor) -> Result<Tensor> {
        self.decode_traced(skips, bridge, &mut |_, _| {})
    }

    fn decode_traced(
        &self,
        skips: &[Tensor],
        bridge: &Tensor,
        trace: &mut dyn FnMut(String, [usize; 4]),
    ) -> Result<Tensor> {
        self.check_decoder_inputs(skips, bridge)?;
        let slope = self.config.leaky_slope;
        let mut d = bridge.clone();
        for (i, (level, skip)) in self.decoder.iter().zip(skips).enumerate().rev() {
            let name = format!("dec{}", i + 1);
            let up = level.up.eval(&d, slope)?;
            trace(format!("{name}.up"), up.shape());
            let up = up.fit_spatial(skip.height(), skip.width());
            trace(format!("{name}.fit"), up.shape());
            let cat = Tensor::concat_channels(skip, &up)?;
            trace(format!("{name}.concat"), cat.shape());
            let y1 = level.first.eval(&cat, slope)?;
            trace(format!("{name}.conv1"), y1.shape());
            d = level.second.eval(&y1, slope)?;
            trace(format!("{name}.conv2"), d.shape());
        }
        let logits = self.head.forward(&d)?;
        trace("head".into(), logits.shape());
        let probs = softmax_channels(&logits);
        trace("softmax".into(), probs.shape());
        Ok(probs)
    }

    /// Runs [`UNetModel::segment`] and records the output shape of every layer
    /// in execution order.
    pub fn shape_trace(&self, image: &Tensor) -> Result<Vec<(String, [usize; 4])>> {
        let mut out = Vec::new();
        let mut rec = |name: String, shape: [usize; 4]| out.push((name, shape));
        let taps = self.encode_traced(image, &mut rec)?;
        self.decode_traced(taps.skips(), taps.bridge(), &mut rec)?;
        Ok(out)
    }

    /// Standard U-net pass in eval mode.
    pub fn segment(&self, image: &Tensor) -> Result<Tensor> {
        let taps = self.encode(image)?;
        self.decode(taps.skips(), taps.bridge())
    }

    /// Encoder in either mode; train mode updates batch-norm running statistics.
    pub fn encoder_forward(&mut self, image: &Tensor, mode: Mode) -> Result<EncoderTaps> {
        match mode {
            Mode::Eval => self.encode(image),
            Mode::Train => Ok(EncoderTaps {
                levels: self.encoder_train(image)?.taps,
            }),
        }
    }

    /// Decoder in either mode; train mode updates batch-norm running statistics.
    pub fn decoder_forward(&mut self, skips: &[Tensor], bridge: &Tensor, mode: Mode) -> Result<Tensor> {
        match mode {
            Mode::Eval => self.decode(skips, bridge),
            Mode::Train => {
                self.check_decoder_inputs(skips, bridge)?;
                let (d, _) = self.decoder_train(skips, bridge)?;
                Ok(softmax_channels(&self.head.forward(&d)?))
            }
        }
    }

    fn encoder_train(&mut self, image: &Tensor) -> Result<EncoderTrace> {
        self.check_image(image)?;
        let slope = self.config.leaky_slope;
        let depth = self.encoder.len();
        let mut trace = EncoderTrace {
            taps: Vec::with_capacity(depth),
            blocks: Vec::with_capacity(depth),
            pools: Vec::with_capacity(depth - 1),
        };
        let mut x = image.clone();
        for (i, level) in self.encoder.iter_mut().enumerate() {
            let (y1, c1) = level.first.train(&x, slope)?;
            let (tap, c2) = level.second.train(&y1, slope)?;
            if i + 1 < depth {
                let rec = maxpool(&tap, POOL_KERNEL, POOL_STRIDE)?;
                x = rec.output.clone();
                trace.pools.push(rec);
            }
            trace.blocks.push((c1, c2));
            trace.taps.push(tap);
        }
        Ok(trace)
    }

    fn decoder_train(&mut self, skips: &[Tensor], bridge: &Tensor) -> Result<(Tensor, Vec<DecoderCache>)> {
        let slope = self.config.leaky_slope;
        let mut caches = Vec::with_capacity(self.decoder.len());
        let mut d = bridge.clone();
        for (level, skip) in self.decoder.iter_mut().zip(skips).rev() {
            let (up, cu) = level.up.train(&d, slope)?;
            let up_shape = up.shape();
            let up = up.fit_spatial(skip.height(), skip.width());
            let cat = Tensor::concat_channels(skip, &up)?;
            let (y1, c1) = level.first.train(&cat, slope)?;
            let (y2, c2) = level.second.train(&y1, slope)?;
            caches.push(DecoderCache {
                up: cu,
                up_shape,
                skip_channels: skip.channels(),
                first: c1,
                second: c2,
            });
            d = y2;
        }
        // Caches are pushed deepest first; store them level-1 first.
        caches.reverse();
        Ok((d, caches))
    }

    /// Train-mode forward and full backward pass for a batch and its (N, H, W)
    /// class targets. Batch-norm running statistics are updated.
    pub fn forward_train(&mut self, batch: &Tensor, targets: &[u8]) -> Result<TrainStep> {
        let enc = self.encoder_train(batch)?;
        let (top, dec) = self.decoder_train(enc.skips(), enc.bridge())?;
        let logits = self.head.forward(&top)?;
        let probs = softmax_channels(&logits);
        let (loss, _) = cross_entropy_loss(&probs, targets)?;
        let dlogits = softmax_cross_entropy_grad(&probs, targets)?;

        let slope = self.config.leaky_slope;
        let mut grads = Gradients::default();
        let head = conv2d_grad(&top, &self.head.weight, &self.head.spec, &dlogits)?;
        grads.insert("head.weight".into(), head.weight.into_vec());
        grads.insert("head.bias".into(), head.bias);

        let mut d = head.input;
        let mut skip_grads = vec![None; self.decoder.len()];
        for li in 0..self.decoder.len() {
            let level = &self.decoder[li];
            let cache = &dec[li];
            let name = format!("dec{}", li + 1);
            let dy1 = level.second.backward(&cache.second, &d, slope, &format!("{name}.conv2"), &mut grads)?;
            let dcat = level.first.backward(&cache.first, &dy1, slope, &format!("{name}.conv1"), &mut grads)?;
            let (dskip, dup) = dcat.split_channels(cache.skip_channels)?;
            let dup = dup.fit_spatial(cache.up_shape[2], cache.up_shape[3]);
            d = level.up.backward(&cache.up, &dup, slope, &format!("{name}.up"), &mut grads)?;
            skip_grads[li] = Some(dskip);
        }

        for li in (0..self.encoder.len()).rev() {
            let level = &self.encoder[li];
            let (c1, c2) = &enc.blocks[li];
            let dtap = if li + 1 < self.encoder.len() {
                let mut g = maxpool_grad(&enc.pools[li], &d)?;
                let skip = skip_grads[li].take().expect("decoder produced every skip gradient");
                for (a, b) in g.data_mut().iter_mut().zip(skip.data()) {
                    *a += b;
                }
                g
            } else {
                d
            };
            let name = format!("enc{}", li + 1);
            let dy1 = level.second.backward(c2, &dtap, slope, &format!("{name}.conv2"), &mut grads)?;
            d = level.first.backward(c1, &dy1, slope, &format!("{name}.conv1"), &mut grads)?;
        }
        Ok(TrainStep { loss, grads, probs })
    }

    /// Branch choices a train-mode forward on `batch` makes. Running
    /// statistics of `self` are left untouched.
    pub fn branch_pattern(&self, batch: &Tensor) -> Result<BranchPattern> {
        let mut m = self.clone();
        let enc = m.encoder_train(batch)?;
        let (_, dec) = m.decoder_train(enc.skips(), enc.bridge())?;
        let mut active = HashMap::new();
        for (i, (c1, c2)) in enc.blocks.iter().enumerate() {
            active.insert(format!("enc{}.conv1", i + 1), c1.active());
            active.insert(format!("enc{}.conv2", i + 1), c2.active());
        }
        for (i, c) in dec.iter().enumerate() {
            active.insert(format!("dec{}.up", i + 1), c.up.active());
            active.insert(format!("dec{}.conv1", i + 1), c.first.active());
            active.insert(format!("dec{}.conv2", i + 1), c.second.active());
        }
        Ok(BranchPattern {
            active,
            pool_argmax: enc.pools.into_iter().map(|p| p.argmax).collect(),
        })
    }

    /// Train-mode loss only (no backward). Updates running statistics.
    pub fn loss_train(&mut self, batch: &Tensor, targets: &[u8]) -> Result<f32> {
        let enc = self.encoder_train(batch)?;
        let (top, _) = self.decoder_train(enc.skips(), enc.bridge())?;
        let probs = softmax_channels(&self.head.forward(&top)?);
        Ok(cross_entropy_loss(&probs, targets)?.0)
    }

    /// Every parameter and running statistic, in a stable order.
    pub fn params(&self) -> Vec<ParamRef<'_>> {
        let mut out = Vec::new();
        for (i, level) in self.encoder.iter().enumerate() {
            level.first.params(&format!("enc{}.conv1", i + 1), &mut out);
            level.second.params(&format!("enc{}.conv2", i + 1), &mut out);
        }
        for (i, level) in self.decoder.iter().enumerate() {
            level.up.params(&format!("dec{}.up", i + 1), &mut out);
            level.first.params(&format!("dec{}.conv1", i + 1), &mut out);
            level.second.params(&format!("dec{}.conv2", i + 1), &mut out);
        }
        self.head.params("head", &mut out);
        out
    }

    pub fn params_mut(&mut self) -> Vec<ParamMut<'_>> {
        let mut out = Vec::new();
        for (i, level) in self.encoder.iter_mut().enumerate() {
            level.first.params_mut(&format!("enc{}.conv1", i + 1), &mut out);
            level.second.params_mut(&format!("enc{}.conv2", i + 1), &mut out);
        }
        for (i, level) in self.decoder.iter_mut().enumerate() {
            level.up.params_mut(&format!("dec{}.up", i + 1), &mut out);
            level.first.params_mut(&format!("dec{}.conv1", i + 1), &mut out);
            level.second.params_mut(&format!("dec{}.conv2", i + 1), &mut out);
        }
        self.head.params_mut("head", &mut out);
        out
    }

    /// Number of trainable scalars.
    pub fn parameter_count(&self) -> usize {
        self.params()
            .iter()
            .filter(|p| p.kind == ParamKind::Trainable)
            .map(|p| p.data.len())
            .sum()
    }
}

struct EncoderTrace {
    taps: Vec<Tensor>,
    blocks: Vec<(ConvBlockCache, ConvBlockCache)>,
    pools: Vec<PoolRecord>,
}

impl EncoderTrace {
    fn skips(&self) -> &[Tensor] {
        &self.taps[..self.taps.len() - 1]
    }
    fn bridge(&self) -> &Tensor {
        self.taps.last().unwrap()
    }
}

struct DecoderCache {
    up: ConvBlockCache,
    up_shape: [usize; 4],
    skip_channels: usize,
    first: ConvBlockCache,
    second: ConvBlockCache,
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn tiny() -> UNetModel {
        UNetModel::init(UNetConfig::new(32, 4), 7).unwrap()
    }

    fn random_batch(n: usize, size: usize, seed: u64) -> (Tensor, Vec<u8>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::from_fn([n, 3, size, size], |_, _, _, _| rng.gen_range(0.0..1.0));
        let t = (0..n * size * size).map(|_| rng.gen_range(0..3u8)).collect();
        (x, t)
    }

    #[test]
    fn same_seed_same_parameters() {
        assert_eq!(tiny(), tiny());
        assert_ne!(tiny(), UNetModel::init(UNetConfig::new(32, 4), 8).unwrap());
    }

    #[test]
    fn full_scale_config_has_full_bridge_conv() {
        // Parameters only; no forward pass at this size.
        let m = UNetModel::init(UNetConfig::full_scale(), 0).unwrap();
        let p = m.params();
        let bridge = p.iter().find(|p| p.name == "enc5.conv2.weight").unwrap();
        assert_eq!(bridge.dims, vec![1024, 1024, 3, 3]);
        let up = p.iter().find(|p| p.name == "dec4.up.weight").unwrap();
        assert_eq!(up.dims, vec![1024, 512, 3, 3]);
        let head = p.iter().find(|p| p.name == "head.weight").unwrap();
        assert_eq!(head.dims, vec![3, 64, 3, 3]);
    }

    #[test]
    fn tap_extents_desk_scale() {
        let m = UNetModel::init(UNetConfig::new(64, 4), 1).unwrap();
        let (x, _) = random_batch(1, 64, 0);
        let taps = m.encode(&x).unwrap();
        let extents: Vec<_> = taps.levels.iter().map(|t| t.height()).collect();
        assert_eq!(extents, vec![64, 31, 15, 7, 3]);
        let chans: Vec<_> = taps.levels.iter().map(|t| t.channels()).collect();
        assert_eq!(chans, vec![4, 8, 16, 32, 64]);
    }

    #[test]
    fn segment_is_normalized_and_matches_decode_of_taps() {
        let m = tiny();
        let (x, _) = random_batch(2, 32, 1);
        let p = m.segment(&x).unwrap();
        assert_eq!(p.shape(), [2, 3, 32, 32]);
        for n in 0..2 {
            for i in 0..32 * 32 {
                let s: f32 = (0..3).map(|c| p.sample(n)[c * 1024 + i]).sum();
                assert!((s - 1.0).abs() < 1e-5);
            }
        }
        let taps = m.encode(&x).unwrap();
        assert!(m.decode(taps.skips(), taps.bridge()).unwrap().bitwise_eq(&p));
    }

    #[test]
    fn segment_independent_of_batch_packing() {
        let m = tiny();
        let (x, _) = random_batch(3, 32, 2);
        let all = m.segment(&x).unwrap();
        for n in 0..3 {
            let one = m.segment(&x.select(n)).unwrap();
            assert!(one.max_abs_diff(&all.select(n)) <= 1e-5);
        }
    }

    #[test]
    fn null_response_is_uniform_at_init() {
        let m = tiny();
        let skips: Vec<Tensor> = (1..5).map(|l| Tensor::zeros(m.tap_shape(l, 1).unwrap())).collect();
        let bridge = Tensor::zeros(m.tap_shape(5, 1).unwrap());
        let a = m.decode(&skips, &bridge).unwrap();
        let b = m.decode(&skips, &bridge).unwrap();
        assert!(a.bitwise_eq(&b));
        // Biases are zero at init, so the field is exactly uniform.
        for c in 0..3 {
            let plane = &a.data()[c * 1024..(c + 1) * 1024];
            assert!(plane.iter().all(|&v| v == plane[0]));
        }
    }

    #[test]
    fn wrong_input_shape_names_axis() {
        let m = tiny();
        let err = m.segment(&Tensor::zeros([1, 3, 30, 32])).unwrap_err();
        assert!(err.to_string().contains("image height"), "{err}");
        let skips: Vec<Tensor> = (1..5).map(|l| Tensor::zeros(m.tap_shape(l, 1).unwrap())).collect();
        let err = m.decode(&skips, &Tensor::zeros([1, 5, 1, 1])).unwrap_err();
        assert!(err.to_string().contains("channels"), "{err}");
    }

    #[test]
    fn initial_loss_near_ln3_and_gradients_cover_all_params() {
        let mut m = UNetModel::init(UNetConfig::new(32, 8), 3).unwrap();
        let (x, t) = random_batch(2, 32, 3);
        let step = m.forward_train(&x, &t).unwrap();
        assert!((step.loss - 3f32.ln()).abs() < 0.2, "loss {}", step.loss);
        assert!(step.grads.is_finite());
        for p in m.params() {
            let g = step.grads.get(&p.name);
            match p.kind {
                ParamKind::Trainable => assert_eq!(g.map(<[f32]>::len), Some(p.data.len()), "{}", p.name),
                ParamKind::RunningStat => assert!(g.is_none()),
            }
        }
    }

    #[test]
    fn train_forward_updates_running_stats_eval_does_not() {
        let mut m = tiny();
        let before = m.clone();
        let (x, _) = random_batch(2, 32, 4);
        m.encoder_forward(&x, Mode::Eval).unwrap();
        assert_eq!(m, before);
        m.encoder_forward(&x, Mode::Train).unwrap();
        assert_ne!(m.encoder[0].first.bn.running_mean, before.encoder[0].first.bn.running_mean);
    }

    #[test]
    fn shape_trace_fixes_up_odd_deconv() {
        let m = UNetModel::init(UNetConfig::new(64, 2), 0).unwrap();
        let trace = m.shape_trace(&Tensor::zeros([1, 3, 64, 64])).unwrap();
        let get = |n: &str| trace.iter().find(|(k, _)| k == n).unwrap().1;
        assert_eq!(get("dec1.up"), [1, 2, 63, 63]);
        assert_eq!(get("dec1.fit"), [1, 2, 64, 64]);
        assert_eq!(get("dec1.concat"), [1, 4, 64, 64]);
        assert_eq!(get("softmax"), [1, 3, 64, 64]);
    }
}

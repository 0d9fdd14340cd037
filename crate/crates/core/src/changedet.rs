//! Unsupervised change detection from thresholded encoder feature-map
//! differences, decoded by the segmentation network's own decoder.

use std::sync::OnceLock;

use log::warn;
use serde::Serialize;

use crate::error::{check_dim, Error, Result};
use crate::metrics::argmax_map;
use crate::synthdata::{ChangeMask, Class, ClassMask, RgbImage, NUM_CLASSES};
use crate::tensor::Tensor;
use crate::unet::{UNetModel, LEVELS};

/// Default per-pixel L1 distance from the null response above which a pixel
/// counts as changed.
pub const DEFAULT_EPSILON_CHANGE: f32 = 0.1;

/// One threshold per U-net level, level 1 first.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ThresholdSchedule {
    pub thetas: [f32; LEVELS],
}

impl Default for ThresholdSchedule {
    fn default() -> Self {
        ThresholdSchedule {
            thetas: [0.4, 0.6, 0.8, 1.0, 1.2],
        }
    }
}

impl ThresholdSchedule {
    pub fn new(thetas: [f32; LEVELS]) -> Result<Self> {
        if let Some(t) = thetas.iter().find(|t| !(t.is_finite() && **t >= 0.0)) {
            return Err(Error::Config(format!("threshold {t} must be finite and non-negative")));
        }
        Ok(ThresholdSchedule { thetas })
    }

    /// Every level gets `theta`.
    pub fn uniform(theta: f32) -> Result<Self> {
        Self::new([theta; LEVELS])
    }

    pub fn is_non_decreasing(&self) -> bool {
        self.thetas.windows(2).all(|w| w[0] <= w[1])
    }
}

/// Elementwise: 0 where `|f − f′| ≤ θ`, otherwise `f′`.
pub fn difference_image(f: &Tensor, f_prime: &Tensor, theta: f32) -> Result<Tensor> {
    let (a, b) = (f.shape(), f_prime.shape());
    for (axis, name) in ["batch", "channels", "height", "width"].into_iter().enumerate() {
        check_dim(name, a[axis], b[axis])?;
    }
    if !(theta.is_finite() && theta >= 0.0) {
        return Err(Error::Config(format!("threshold {theta} must be finite and non-negative")));
    }
    let mut di = f_prime.clone();
    for (d, &x) in di.data_mut().iter_mut().zip(f.data()) {
        if (x - *d).abs() <= theta {
            *d = 0.0;
        }
    }
    Ok(di)
}

/// A level's difference image.
#[derive(Clone, Debug, PartialEq)]
pub struct DifferenceImage {
    pub level: usize,
    pub tensor: Tensor,
}

impl DifferenceImage {
    pub fn nonzero_fraction(&self) -> f64 {
        let d = self.tensor.data();
        if d.is_empty() {
            return 0.0;
        }
        d.iter().filter(|&&v| v != 0.0).count() as f64 / d.len() as f64
    }
}

/// Decoder output for all-zero skips and bridge, shape (1, classes, H, W).
pub fn null_response(model: &UNetModel) -> Result<Tensor> {
    let skips = (1..LEVELS)
        .map(|l| model.tap_shape(l, 1).map(Tensor::zeros))
        .collect::<Result<Vec<_>>>()?;
    let bridge = Tensor::zeros(model.tap_shape(LEVELS, 1)?);
    model.decode(&skips, &bridge)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChangeResult {
    pub changed: ChangeMask,
    /// Argmax class of the DI-driven decoder output, defined for every pixel.
    pub classes: ClassMask,
    /// Decoder output probabilities, (1, classes, H, W).
    pub probs: Tensor,
    pub difference_images: Vec<DifferenceImage>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClassCount {
    pub class: &'static str,
    pub changed_pixels: usize,
}

/// Summary written next to rendered outputs.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ChangeReport {
    pub di_nonzero_fraction: Vec<f64>,
    pub changed_pixels: usize,
    pub total_pixels: usize,
    pub changed_by_class: Vec<ClassCount>,
}

impl ChangeResult {
    pub fn report(&self) -> ChangeReport {
        let mut by_class = [0usize; NUM_CLASSES];
        for (&c, &ch) in self.classes.as_raw().iter().zip(self.changed.as_raw()) {
            if ch {
                by_class[usize::from(c)] += 1;
            }
        }
        ChangeReport {
            di_nonzero_fraction: self.difference_images.iter().map(DifferenceImage::nonzero_fraction).collect(),
            changed_pixels: self.changed.count(),
            total_pixels: self.changed.as_raw().len(),
            changed_by_class: Class::ALL
                .iter()
                .map(|c| ClassCount {
                    class: c.name(),
                    changed_pixels: by_class[c.index()],
                })
                .collect(),
        }
    }
}

/// Unchanged pixels black, changed pixels in their class color.
pub fn render_change(result: &ChangeResult) -> RgbImage {
    let (w, h) = (result.classes.width(), result.classes.height());
    RgbImage::from_fn(w, h, |x, y| {
        if result.changed.get(x, y) {
            result.classes.get(x, y).color()
        } else {
            [0, 0, 0]
        }
    })
}

/// Change detection against a shared model, with the null response computed
/// once on first use.
#[derive(Debug)]
pub struct ChangeDetector<'m> {
    model: &'m UNetModel,
    null: OnceLock<Tensor>,
}

// Normalized pixels sit near [0, 1]; far outside this band the input was
// most likely not normalized.
const PLAUSIBLE_INPUT: std::ops::RangeInclusive<f32> = -5.0..=6.0;

impl<'m> ChangeDetector<'m> {
    pub fn new(model: &'m UNetModel) -> Self {
        ChangeDetector {
            model,
            null: OnceLock::new(),
        }
    }

    pub fn model(&self) -> &UNetModel {
        self.model
    }

    pub fn null_response(&self) -> Result<&Tensor> {
        if let Some(t) = self.null.get() {
            return Ok(t);
        }
        let t = null_response(self.model)?;
        Ok(self.null.get_or_init(|| t))
    }

    /// Compares normalized single images `before` and `after`, shape (1, 3, S, S).
    pub fn detect(
        &self,
        before: &Tensor,
        after: &Tensor,
        schedule: &ThresholdSchedule,
        epsilon_change: f32,
    ) -> Result<ChangeResult> {
        if !(epsilon_change.is_finite() && epsilon_change >= 0.0) {
            return Err(Error::Config(format!("epsilon_change {epsilon_change} must be finite and non-negative")));
        }
        check_dim("batch", 1, before.batch())?;
        check_dim("batch", 1, after.batch())?;
        for (name, t) in [("first", before), ("second", after)] {
            if t.data().iter().any(|v| !PLAUSIBLE_INPUT.contains(v)) {
                warn!("{name} image has values outside {PLAUSIBLE_INPUT:?}; is it normalized?");
            }
        }
        let t1 = self.model.encode(before)?;
        let t2 = self.model.encode(after)?;
        let mut dis = Vec::with_capacity(LEVELS);
        for (l, (f, fp)) in t1.levels.iter().zip(&t2.levels).enumerate() {
            dis.push(DifferenceImage {
                level: l + 1,
                tensor: difference_image(f, fp, schedule.thetas[l])?,
            });
        }
        let skips: Vec<Tensor> = dis[..LEVELS - 1].iter().map(|d| d.tensor.clone()).collect();
        let probs = self.model.decode(&skips, &dis[LEVELS - 1].tensor)?;
        let null = self.null_response()?;

        let [_, c, h, w] = probs.shape();
        let plane = h * w;
        let changed: Vec<bool> = (0..plane)
            .map(|i| {
                let dist: f32 = (0..c).map(|ch| (probs.data()[ch * plane + i] - null.data()[ch * plane + i]).abs()).sum();
                dist > epsilon_change
            })
            .collect();
        Ok(ChangeResult {
            changed: ChangeMask::from_raw(w, h, changed)?,
            classes: ClassMask::from_raw(w, h, argmax_map(&probs))?,
            probs,
            difference_images: dis,
        })
    }
}

/// One-off detection; see [`ChangeDetector`] to reuse the null response.
pub fn detect(
    model: &UNetModel,
    before: &Tensor,
    after: &Tensor,
    schedule: &ThresholdSchedule,
    epsilon_change: f32,
) -> Result<ChangeResult> {
    ChangeDetector::new(model).detect(before, after, schedule, epsilon_change)
}

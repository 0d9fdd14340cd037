use serde::Serialize;

use crate::error::{Error, Result};
use crate::ops::LEAKY_SLOPE;

/// Number of U-net levels: four pooled encoder levels plus the bridge.
pub const LEVELS: usize = 5;

/// Kernel / stride of the encoder max pooling.
pub const POOL_KERNEL: usize = 3;
pub const POOL_STRIDE: usize = 2;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct UNetConfig {
    pub input_size: usize,
    pub input_channels: usize,
    pub num_classes: usize,
    pub base_channels: usize,
    pub levels: usize,
    pub leaky_slope: f32,
}

impl Default for UNetConfig {
    fn default() -> Self {
        UNetConfig::full_scale()
    }
}

impl UNetConfig {
    /// 320×320 input, 64 kernels at level one, 1024 at the bridge.
    pub fn full_scale() -> Self {
        UNetConfig::new(320, 64)
    }

    /// CPU-sized default: 64×64 input, 16 kernels at level one.
    pub fn desk() -> Self {
        UNetConfig::new(64, 16)
    }

    pub fn new(input_size: usize, base_channels: usize) -> Self {
        UNetConfig {
            input_size,
            input_channels: 3,
            num_classes: 3,
            base_channels,
            levels: LEVELS,
            leaky_slope: LEAKY_SLOPE,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels != LEVELS {
            return Err(Error::Config(format!("levels must be {LEVELS}, got {}", self.levels)));
        }
        if self.input_channels == 0 || self.base_channels == 0 {
            return Err(Error::Config("channel counts must be positive".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::Config("need at least two classes".into()));
        }
        if self.input_size == 0 || !self.input_size.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "input size must be a positive even integer, got {}",
                self.input_size
            )));
        }
        if !(self.leaky_slope.is_finite() && self.leaky_slope >= 0.0) {
            return Err(Error::Config("leaky slope must be finite and non-negative".into()));
        }
        self.level_extents().map(|_| ())
    }

    /// Channel width at `level` (1-based): `base · 2^(level-1)`.
    pub fn level_channels(&self, level: usize) -> usize {
        self.base_channels << (level - 1)
    }

    /// Spatial extent of each level's tap, level 1 first.
    pub fn level_extents(&self) -> Result<Vec<usize>> {
        let mut extents = vec![self.input_size];
        for _ in 1..self.levels {
            let n = *extents.last().unwrap();
            if n < POOL_KERNEL {
                return Err(Error::Config(format!(
                    "input size {} is too small: a level of extent {n} cannot be pooled",
                    self.input_size
                )));
            }
            extents.push((n - POOL_KERNEL) / POOL_STRIDE + 1);
        }
        Ok(extents)
    }
}

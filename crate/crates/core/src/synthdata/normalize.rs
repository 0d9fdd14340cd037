//! Per-channel normalization to mean 0.5 / standard deviation 0.5.

use serde::Serialize;

use crate::error::{check_dim, Error, Result};
use crate::synthdata::RgbImage;
use crate::tensor::Tensor;

/// Per-channel mean and standard deviation of raw 8-bit pixels.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NormalizationStats {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl NormalizationStats {
    /// Maps the full 0–255 range onto [0, 1]; used before real statistics exist.
    pub fn unit_range(channels: usize) -> Self {
        NormalizationStats {
            mean: vec![127.5; channels],
            std: vec![255.0; channels],
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_dim("normalization channels", self.mean.len(), self.std.len())?;
        if self.std.iter().any(|&s| !(s.is_finite() && s > 0.0)) || self.mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::Config(format!("invalid normalization statistics {self:?}")));
        }
        Ok(())
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }
}

/// Dataset statistics over all pixels of all images (population std).
pub fn compute_stats<'a>(images: impl IntoIterator<Item = &'a RgbImage>) -> Result<NormalizationStats> {
    let mut sum = [0f64; 3];
    let mut sq = [0f64; 3];
    let mut count = 0u64;
    for img in images {
        for px in img.pixels() {
            for c in 0..3 {
                let v = f64::from(px[c]);
                sum[c] += v;
                sq[c] += v * v;
            }
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::Degenerate("no pixels to compute statistics from".into()));
    }
    let n = count as f64;
    let mut mean = Vec::with_capacity(3);
    let mut std = Vec::with_capacity(3);
    for c in 0..3 {
        let m = sum[c] / n;
        let var = (sq[c] / n - m * m).max(0.0);
        mean.push(m as f32);
        // Flat channels get unit spread so normalization stays finite.
        std.push(if var > 1e-12 { var.sqrt() as f32 } else { 1.0 });
    }
    Ok(NormalizationStats { mean, std })
}

/// `0.5 + 0.5·(x − mean)/std` per channel, as a (1, 3, H, W) tensor.
pub fn normalize(image: &RgbImage, stats: &NormalizationStats) -> Result<Tensor> {
    stats.validate()?;
    check_dim("normalization channels", 3, stats.channels())?;
    let (w, h) = (image.width(), image.height());
    let mut t = Tensor::zeros([1, 3, h, w]);
    let plane = w * h;
    let data = t.data_mut();
    for (i, px) in image.pixels().enumerate() {
        for c in 0..3 {
            data[c * plane + i] = 0.5 + 0.5 * (f32::from(px[c]) - stats.mean[c]) / stats.std[c];
        }
    }
    Ok(t)
}

/// Inverse of [`normalize`], rounded and clamped to 8 bits.
pub fn denormalize(t: &Tensor, stats: &NormalizationStats) -> Result<RgbImage> {
    check_dim("batch", 1, t.batch())?;
    check_dim("channels", 3, t.channels())?;
    let (h, w) = (t.height(), t.width());
    let plane = h * w;
    let mut data = Vec::with_capacity(plane * 3);
    for i in 0..plane {
        for c in 0..3 {
            let x = (t.data()[c * plane + i] - 0.5) / 0.5 * stats.std[c] + stats.mean[c];
            data.push(x.round().clamp(0.0, 255.0) as u8);
        }
    }
    RgbImage::from_raw(w, h, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stats() -> NormalizationStats {
        NormalizationStats {
            mean: vec![100.0, 50.0, 200.0],
            std: vec![20.0, 10.0, 5.0],
        }
    }

    #[test]
    fn mean_maps_to_half_and_std_to_one() {
        let img = RgbImage::from_raw(2, 1, vec![100, 50, 200, 120, 60, 205]).unwrap();
        let t = normalize(&img, &stats()).unwrap();
        assert_eq!(t.at(0, 0, 0, 0), 0.5);
        assert_eq!(t.at(0, 1, 0, 0), 0.5);
        assert_eq!(t.at(0, 0, 0, 1), 1.0);
        assert_eq!(t.at(0, 2, 0, 1), 1.0);
    }

    #[test]
    fn denormalize_inverts() {
        let data: Vec<u8> = (0..5 * 4 * 3).map(|i| (i * 37 % 256) as u8).collect();
        let img = RgbImage::from_raw(5, 4, data).unwrap();
        let s = compute_stats([&img]).unwrap();
        let back = denormalize(&normalize(&img, &s).unwrap(), &s).unwrap();
        for (a, b) in img.as_raw().iter().zip(back.as_raw()) {
            assert!((*a as i32 - *b as i32).abs() <= 1);
        }
    }

    #[test]
    fn transformed_dataset_has_half_mean_and_std() {
        let imgs: Vec<RgbImage> = (0..4)
            .map(|k| RgbImage::from_raw(8, 8, (0..192).map(|i| ((i * 13 + k * 71) % 251) as u8).collect()).unwrap())
            .collect();
        let s = compute_stats(&imgs).unwrap();
        let mut vals = vec![Vec::new(); 3];
        for img in &imgs {
            let t = normalize(img, &s).unwrap();
            for c in 0..3 {
                vals[c].extend(t.data()[c * 64..(c + 1) * 64].iter().map(|&v| f64::from(v)));
            }
        }
        for v in vals {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            let sd = (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt();
            assert!((m - 0.5).abs() < 1e-3 && (sd - 0.5).abs() < 1e-3, "{m} {sd}");
        }
    }
}

//! Procedural urban scenes, simulated change and sensor noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::image::{ChangeMask, Class, ClassMask, RgbImage};
use crate::error::{Error, Result};

/// Smallest scene edge the generator accepts.
pub const MIN_SCENE_SIZE: usize = 32;
/// Largest allowed amplitude of the irrelevant foliage jitter.
pub const MAX_FOLIAGE_JITTER: u8 = 8;

/// An image with its per-pixel ground-truth classes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabeledImage {
    pub image: RgbImage,
    pub mask: ClassMask,
}

/// A before/after pair with the exact ground truth of the edit.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChangePair {
    pub before: RgbImage,
    pub after: RgbImage,
    pub change_mask: ChangeMask,
    pub before_classes: ClassMask,
    pub after_classes: ClassMask,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChangeConfig {
    /// Requested fraction of edited pixels, in [0, 0.5).
    pub fraction: f64,
    /// Amplitude of the uniform texture jitter applied to background pixels
    /// outside the edit; 0 disables it.
    pub foliage_jitter: u8,
}

impl ChangeConfig {
    pub fn new(fraction: f64) -> Self {
        ChangeConfig {
            fraction,
            foliage_jitter: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Rect {
    x: usize,
    y: usize,
    w: usize,
    h: usize,
}

impl Rect {
    fn cells(self) -> impl Iterator<Item = (usize, usize)> {
        (self.y..self.y + self.h).flat_map(move |y| (self.x..self.x + self.w).map(move |x| (x, y)))
    }

    /// The rectangle grown by `m` on every side, clipped to the scene.
    fn grown(self, m: usize, size: usize) -> Rect {
        let x = self.x.saturating_sub(m);
        let y = self.y.saturating_sub(m);
        Rect {
            x,
            y,
            w: (self.x + self.w + m).min(size) - x,
            h: (self.y + self.h + m).min(size) - y,
        }
    }
}

fn clamp_u8(v: i32) -> u8 {
    v.clamp(0, 255) as u8
}

fn jitter(rng: &mut ChaCha8Rng, base: [i32; 3], amp: i32) -> [u8; 3] {
    let j = rng.gen_range(-amp..=amp);
    [clamp_u8(base[0] + j), clamp_u8(base[1] + j), clamp_u8(base[2] + j)]
}

fn random_rect(rng: &mut ChaCha8Rng, size: usize, min: usize, max: usize) -> Rect {
    let w = rng.gen_range(min..=max);
    let h = rng.gen_range(min..=max);
    Rect {
        x: rng.gen_range(0..=size - w),
        y: rng.gen_range(0..=size - h),
        w,
        h,
    }
}

fn paint_background(rng: &mut ChaCha8Rng, size: usize) -> RgbImage {
    let base = [rng.gen_range(55..80), rng.gen_range(105..140), rng.gen_range(35..60)];
    let gx: f32 = rng.gen_range(-8.0..8.0);
    let gy: f32 = rng.gen_range(-8.0..8.0);
    let mut img = RgbImage::from_fn(size, size, |x, y| {
        let shade = (gx * x as f32 / size as f32 + gy * y as f32 / size as f32) as i32;
        let s = rng.gen_range(-10..=10);
        [
            clamp_u8(base[0] + shade + s / 2),
            clamp_u8(base[1] + shade + s),
            clamp_u8(base[2] + shade + s / 2),
        ]
    });
    // Tree crowns: darker or lighter green discs.
    for _ in 0..rng.gen_range(3..10) {
        let cx = rng.gen_range(0..size) as i32;
        let cy = rng.gen_range(0..size) as i32;
        let r = rng.gen_range(2..(size as i32 / 10).max(3));
        let d = rng.gen_range(-20..15);
        for y in (cy - r).max(0)..(cy + r + 1).min(size as i32) {
            for x in (cx - r).max(0)..(cx + r + 1).min(size as i32) {
                if (x - cx).pow(2) + (y - cy).pow(2) <= r * r {
                    let p = img.get(x as usize, y as usize);
                    img.put(
                        x as usize,
                        y as usize,
                        [clamp_u8(p[0] as i32 + d / 2), clamp_u8(p[1] as i32 + d), clamp_u8(p[2] as i32 + d / 2)],
                    );
                }
            }
        }
    }
    img
}

fn paint_paved(rng: &mut ChaCha8Rng, img: &mut RgbImage, mask: &mut ClassMask, rect: Rect, lo: i32, hi: i32) {
    let g = rng.gen_range(lo..hi);
    let base = [g - 3, g, g + 4];
    for (x, y) in rect.cells() {
        img.put(x, y, jitter(rng, base, 6));
        mask.set(x, y, Class::Immutable);
    }
}

fn roof_color(rng: &mut ChaCha8Rng) -> [i32; 3] {
    match rng.gen_range(0..3) {
        0 => [rng.gen_range(170..210), rng.gen_range(40..70), rng.gen_range(30..60)],
        1 => [rng.gen_range(200..235), rng.gen_range(110..140), rng.gen_range(40..70)],
        _ => [rng.gen_range(110..140), rng.gen_range(60..85), rng.gen_range(35..55)],
    }
}

/// Paints a roof over `parts` with a shading ramp along x.
fn paint_building(rng: &mut ChaCha8Rng, img: &mut RgbImage, mask: &mut ClassMask, parts: &[Rect]) {
    let base = roof_color(rng);
    let ramp: f32 = rng.gen_range(-12.0..12.0);
    let x0 = parts.iter().map(|r| r.x).min().unwrap_or(0);
    let x1 = parts.iter().map(|r| r.x + r.w).max().unwrap_or(1);
    let span = (x1 - x0).max(1) as f32;
    for r in parts {
        for (x, y) in r.cells() {
            let shade = (ramp * (x - x0) as f32 / span) as i32;
            let c = [base[0] + shade, base[1] + shade, base[2] + shade];
            img.put(x, y, jitter(rng, c, 5));
            mask.set(x, y, Class::Building);
        }
    }
}

/// Building footprint: a rectangle, sometimes with a second wing (L shape).
fn building_parts(rng: &mut ChaCha8Rng, size: usize) -> Vec<Rect> {
    let min = (size / 10).max(4);
    let max = (size / 4).max(min);
    let main = random_rect(rng, size, min, max);
    let mut parts = vec![main];
    if rng.gen_bool(0.3) && main.w >= 4 && main.h >= 4 {
        let w = rng.gen_range(2..=main.w / 2);
        let h = rng.gen_range(2..=main.h / 2);
        let below = main.y + main.h + h <= size;
        if below {
            parts.push(Rect { x: main.x, y: main.y + main.h, w, h });
        } else if main.x + main.w + w <= size {
            parts.push(Rect { x: main.x + main.w, y: main.y, w, h });
        }
    }
    parts
}

/// One synthetic urban scene: textured vegetation (background), 1–3 road
/// bands (immutable) and 2–8 non-overlapping buildings.
pub fn generate_scene(seed: u64, size: usize) -> Result<LabeledImage> {
    if size < MIN_SCENE_SIZE {
        return Err(Error::Config(format!(
            "scene size {size} is below the minimum of {MIN_SCENE_SIZE}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut image = paint_background(&mut rng, size);
    let mut mask = ClassMask::filled(size, size, Class::Background);

    for _ in 0..rng.gen_range(1..=3) {
        let width = rng.gen_range(3..=(size / 10).max(3));
        let offset = rng.gen_range(0..=size - width);
        let rect = if rng.gen_bool(0.5) {
            Rect { x: 0, y: offset, w: size, h: width }
        } else {
            Rect { x: offset, y: 0, w: width, h: size }
        };
        paint_paved(&mut rng, &mut image, &mut mask, rect, 120, 160);
    }

    let wanted = rng.gen_range(2..=8);
    let mut placed = 0;
    let mut attempts = 0;
    while placed < wanted && attempts < 500 {
        attempts += 1;
        let parts = building_parts(&mut rng, size);
        // Keep a one-pixel gap between buildings.
        let clear = parts
            .iter()
            .all(|r| r.grown(1, size).cells().all(|(x, y)| mask.get(x, y) != Class::Building));
        if clear {
            paint_building(&mut rng, &mut image, &mut mask, &parts);
            placed += 1;
        }
    }
    if placed < 2 {
        return Err(Error::Generation(format!("could not place two buildings in a {size}px scene")));
    }
    Ok(LabeledImage { image, mask })
}

/// Inserts new buildings and paved lots on non-building pixels until the
/// edited fraction is within ±1% (absolute) of `config.fraction`.
pub fn simulate_change(scene: &LabeledImage, config: &ChangeConfig, seed: u64) -> Result<ChangePair> {
    let f = config.fraction;
    if !(0.0..0.5).contains(&f) {
        return Err(Error::Config(format!("change fraction {f} is outside [0, 0.5)")));
    }
    if config.foliage_jitter > MAX_FOLIAGE_JITTER {
        return Err(Error::Config(format!(
            "foliage jitter {} exceeds {MAX_FOLIAGE_JITTER}",
            config.foliage_jitter
        )));
    }
    let (w, h) = (scene.image.width(), scene.image.height());
    let size = w.min(h);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut after = scene.image.clone();
    let mut after_classes = scene.mask.clone();
    let mut change_mask = ChangeMask::new(w, h);

    let total = (w * h) as f64;
    let target = f * total;
    let half_tol = 0.005 * total;
    let mut changed = 0usize;
    let mut attempts = 0;
    while f > 0.0 && (changed as f64) < target - half_tol {
        attempts += 1;
        if attempts > 20_000 || size < 8 {
            return Err(Error::Generation(format!(
                "reached {changed} of {target:.0} changed pixels in a {w}x{h} image"
            )));
        }
        let budget = (target + half_tol - changed as f64).floor() as usize;
        let max_side = (size / 3).min(budget / 2);
        if max_side < 2 {
            continue;
        }
        let rw = rng.gen_range(2..=max_side);
        let rh = rng.gen_range(2..=(budget / rw).min(size / 3).max(2));
        if rw * rh > budget || rw > w || rh > h {
            continue;
        }
        let rect = Rect {
            x: rng.gen_range(0..=w - rw),
            y: rng.gen_range(0..=h - rh),
            w: rw,
            h: rh,
        };
        let free = rect
            .cells()
            .all(|(x, y)| !change_mask.get(x, y) && scene.mask.get(x, y) != Class::Building);
        if !free {
            continue;
        }
        if rng.gen_bool(0.7) {
            paint_building(&mut rng, &mut after, &mut after_classes, &[rect]);
        } else {
            paint_paved(&mut rng, &mut after, &mut after_classes, rect, 70, 100);
        }
        for (x, y) in rect.cells() {
            change_mask.set(x, y, true);
        }
        changed += rect.w * rect.h;
    }

    if config.foliage_jitter > 0 {
        let amp = i32::from(config.foliage_jitter);
        for y in 0..h {
            for x in 0..w {
                if !change_mask.get(x, y) && after_classes.get(x, y) == Class::Background {
                    let p = after.get(x, y);
                    let d = rng.gen_range(-amp..=amp);
                    after.put(x, y, [clamp_u8(p[0] as i32 + d), clamp_u8(p[1] as i32 + d), clamp_u8(p[2] as i32 + d)]);
                }
            }
        }
    }

    Ok(ChangePair {
        before: scene.image.clone(),
        after,
        change_mask,
        before_classes: scene.mask.clone(),
        after_classes,
    })
}

/// Adds zero-mean Gaussian noise with `variance` in squared 8-bit units to
/// every channel of every pixel, then rounds and clamps.
pub fn add_gaussian_noise(image: &RgbImage, variance: f64, seed: u64) -> Result<RgbImage> {
    if !(variance.is_finite() && variance >= 0.0) {
        return Err(Error::Config(format!("noise variance {variance} must be finite and non-negative")));
    }
    if variance == 0.0 {
        return Ok(image.clone());
    }
    let normal = Normal::new(0.0, variance.sqrt()).map_err(|e| Error::Config(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = image.clone();
    for px in out.pixels_mut() {
        for v in px.iter_mut() {
            *v = (f64::from(*v) + normal.sample(&mut rng)).round().clamp(0.0, 255.0) as u8;
        }
    }
    Ok(out)
}

fn tile_origins(width: usize, height: usize, tile: usize, stride: usize) -> Result<Vec<(usize, usize)>> {
    if tile == 0 || stride == 0 {
        return Err(Error::Config("tile size and stride must be positive".into()));
    }
    let steps = |n: usize| if n < tile { 0 } else { (n - tile) / stride + 1 };
    let mut out = Vec::new();
    for ty in 0..steps(height) {
        for tx in 0..steps(width) {
            out.push((tx * stride, ty * stride));
        }
    }
    Ok(out)
}

/// Square tiles in row-major order; partial edge tiles are dropped.
pub fn tile(image: &RgbImage, tile_size: usize, stride: usize) -> Result<Vec<RgbImage>> {
    tile_origins(image.width(), image.height(), tile_size, stride)?
        .into_iter()
        .map(|(x, y)| image.crop(x, y, tile_size, tile_size))
        .collect()
}

/// [`tile`] for class masks, with identical tile order.
pub fn tile_mask(mask: &ClassMask, tile_size: usize, stride: usize) -> Result<Vec<ClassMask>> {
    tile_origins(mask.width(), mask.height(), tile_size, stride)?
        .into_iter()
        .map(|(x, y)| mask.crop(x, y, tile_size, tile_size))
        .collect()
}

//! Raw 8-bit rasters, class masks and PNG I/O.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use crate::error::{check_dim, Error, Result};

/// Number of semantic classes.
pub const NUM_CLASSES: usize = 3;

/// Semantic classes; the discriminant is the class index used everywhere.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Class {
    Building = 0,
    Immutable = 1,
    Background = 2,
}

impl Class {
    pub const ALL: [Class; NUM_CLASSES] = [Class::Building, Class::Immutable, Class::Background];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Result<Class> {
        Class::ALL
            .get(index)
            .copied()
            .ok_or(Error::Class { index, num_classes: NUM_CLASSES })
    }

    /// Rendering and on-disk mask color.
    pub fn color(self) -> [u8; 3] {
        match self {
            Class::Building => [0, 0, 255],
            Class::Immutable => [0, 255, 0],
            Class::Background => [255, 0, 0],
        }
    }

    pub fn from_color(rgb: [u8; 3]) -> Option<Class> {
        Class::ALL.into_iter().find(|c| c.color() == rgb)
    }

    pub fn name(self) -> &'static str {
        match self {
            Class::Building => "building",
            Class::Immutable => "immutable",
            Class::Background => "background",
        }
    }
}

/// 8-bit RGB image stored row-major, interleaved.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize) -> Self {
        RgbImage {
            width,
            height,
            data: vec![0; width * height * 3],
        }
    }

    pub fn from_raw(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        check_dim("rgb buffer length", width * height * 3, data.len())?;
        Ok(RgbImage { width, height, data })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [u8; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        RgbImage { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn put(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn pixels(&self) -> impl Iterator<Item = &[u8]> + '_ {
        self.data.chunks_exact(3)
    }

    pub fn pixels_mut(&mut self) -> impl Iterator<Item = &mut [u8]> + '_ {
        self.data.chunks_exact_mut(3)
    }

    pub fn as_raw(&self) -> &[u8] {
        &self.data
    }

    pub fn into_raw(self) -> Vec<u8> {
        self.data
    }

    /// Copy of the `w`×`h` rectangle at (`x`, `y`).
    pub fn crop(&self, x: usize, y: usize, w: usize, h: usize) -> Result<RgbImage> {
        check_bounds(self.width, self.height, x, y, w, h)?;
        Ok(RgbImage::from_fn(w, h, |cx, cy| self.get(x + cx, y + cy)))
    }
}

/// Per-pixel class indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClassMask {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl ClassMask {
    pub fn filled(width: usize, height: usize, class: Class) -> Self {
        ClassMask {
            width,
            height,
            data: vec![class as u8; width * height],
        }
    }

    pub fn from_raw(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        check_dim("mask length", width * height, data.len())?;
        if let Some(&bad) = data.iter().find(|&&v| usize::from(v) >= NUM_CLASSES) {
            return Err(Error::Class {
                index: usize::from(bad),
                num_classes: NUM_CLASSES,
            });
        }
        Ok(ClassMask { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> Class {
        Class::ALL[usize::from(self.data[y * self.width + x])]
    }

    pub fn set(&mut self, x: usize, y: usize, class: Class) {
        self.data[y * self.width + x] = class as u8;
    }

    pub fn as_raw(&self) -> &[u8] {
        &self.data
    }

    pub fn histogram(&self) -> [usize; NUM_CLASSES] {
        let mut h = [0; NUM_CLASSES];
        for &v in &self.data {
            h[usize::from(v)] += 1;
        }
        h
    }

    pub fn crop(&self, x: usize, y: usize, w: usize, h: usize) -> Result<ClassMask> {
        check_bounds(self.width, self.height, x, y, w, h)?;
        let mut data = Vec::with_capacity(w * h);
        for cy in y..y + h {
            data.extend_from_slice(&self.data[cy * self.width + x..cy * self.width + x + w]);
        }
        Ok(ClassMask { width: w, height: h, data })
    }

    /// Color-coded rendering.
    pub fn to_rgb(&self) -> RgbImage {
        RgbImage::from_fn(self.width, self.height, |x, y| self.get(x, y).color())
    }

    /// Inverse of [`ClassMask::to_rgb`]; any other color is an error.
    pub fn from_rgb(image: &RgbImage) -> Result<ClassMask> {
        let mut data = Vec::with_capacity(image.width() * image.height());
        for (i, px) in image.pixels().enumerate() {
            let rgb = [px[0], px[1], px[2]];
            let class = Class::from_color(rgb).ok_or_else(|| {
                Error::Format(format!(
                    "pixel {i} has color {rgb:?}, which is not a class color"
                ))
            })?;
            data.push(class as u8);
        }
        Ok(ClassMask {
            width: image.width(),
            height: image.height(),
            data,
        })
    }
}

/// Per-pixel changed/unchanged flags.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChangeMask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl ChangeMask {
    pub fn new(width: usize, height: usize) -> Self {
        ChangeMask {
            width,
            height,
            data: vec![false; width * height],
        }
    }

    pub fn from_raw(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        check_dim("mask length", width * height, data.len())?;
        Ok(ChangeMask { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, changed: bool) {
        self.data[y * self.width + x] = changed;
    }

    pub fn as_raw(&self) -> &[bool] {
        &self.data
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&c| c).count()
    }

    pub fn fraction(&self) -> f64 {
        if self.data.is_empty() {
            0.0
        } else {
            self.count() as f64 / self.data.len() as f64
        }
    }

    /// White for changed, black for unchanged.
    pub fn to_rgb(&self) -> RgbImage {
        RgbImage::from_fn(self.width, self.height, |x, y| {
            if self.get(x, y) {
                [255; 3]
            } else {
                [0; 3]
            }
        })
    }

    /// Any non-black pixel counts as changed.
    pub fn from_rgb(image: &RgbImage) -> ChangeMask {
        ChangeMask {
            width: image.width(),
            height: image.height(),
            data: image.pixels().map(|p| p.iter().any(|&v| v != 0)).collect(),
        }
    }
}

fn check_bounds(width: usize, height: usize, x: usize, y: usize, w: usize, h: usize) -> Result<()> {
    if x + w > width || y + h > height {
        return Err(Error::Config(format!(
            "rectangle {w}x{h} at ({x}, {y}) exceeds {width}x{height}"
        )));
    }
    Ok(())
}

/// Reads an 8-bit RGB PNG. Other color types and bit depths are rejected.
pub fn load_png(path: impl AsRef<Path>) -> Result<RgbImage> {
    let path = path.as_ref();
    let decoder = png::Decoder::new(BufReader::new(File::open(path)?));
    let mut reader = decoder.read_info().map_err(|e| Error::Png(format!("{}: {e}", path.display())))?;
    let info = reader.info();
    if info.color_type != png::ColorType::Rgb || info.bit_depth != png::BitDepth::Eight {
        return Err(Error::ColorType {
            color_type: format!("{:?} ({}-bit)", info.color_type, info.bit_depth as u8),
            path: path.to_path_buf(),
        });
    }
    let mut buf = vec![0; reader.output_buffer_size()];
    let frame = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::Png(format!("{}: {e}", path.display())))?;
    buf.truncate(frame.buffer_size());
    RgbImage::from_raw(frame.width as usize, frame.height as usize, buf)
}

pub fn save_png(image: &RgbImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let w = BufWriter::new(File::create(path)?);
    let mut encoder = png::Encoder::new(w, image.width() as u32, image.height() as u32);
    encoder.set_color(png::ColorType::Rgb);
    encoder.set_depth(png::BitDepth::Eight);
    let png_err = |e: png::EncodingError| Error::Png(format!("{}: {e}", path.display()));
    let mut writer = encoder.write_header().map_err(png_err)?;
    writer.write_image_data(image.as_raw()).map_err(png_err)?;
    writer.finish().map_err(png_err)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(w: usize, h: usize) -> RgbImage {
        RgbImage::from_fn(w, h, |x, y| [(x * 7) as u8, (y * 13) as u8, (x ^ y) as u8])
    }

    #[test]
    fn png_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.png");
        let img = sample(37, 21);
        save_png(&img, &p).unwrap();
        assert_eq!(load_png(&p).unwrap(), img);
    }

    #[test]
    fn grayscale_png_names_color_type() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.png");
        let mut enc = png::Encoder::new(File::create(&p).unwrap(), 4, 4);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Eight);
        enc.write_header().unwrap().write_image_data(&[9; 16]).unwrap();
        match load_png(&p) {
            Err(Error::ColorType { color_type, .. }) => assert!(color_type.contains("Grayscale")),
            other => panic!("expected color type error, got {other:?}"),
        }
    }

    #[test]
    fn full_size_png_loads_with_expected_shape() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("big.png");
        save_png(&sample(320, 320), &p).unwrap();
        let img = load_png(&p).unwrap();
        assert_eq!((img.width(), img.height(), img.as_raw().len()), (320, 320, 320 * 320 * 3));
    }

    #[test]
    fn class_colors_round_trip() {
        let mut m = ClassMask::filled(3, 2, Class::Background);
        m.set(0, 0, Class::Building);
        m.set(2, 1, Class::Immutable);
        assert_eq!(ClassMask::from_rgb(&m.to_rgb()).unwrap(), m);
        assert_eq!(m.histogram(), [1, 1, 4]);
        let mut bad = m.to_rgb();
        bad.put(1, 1, [1, 2, 3]);
        assert!(ClassMask::from_rgb(&bad).is_err());
    }

    #[test]
    fn crop_matches_source() {
        let img = sample(10, 8);
        let c = img.crop(3, 2, 4, 5).unwrap();
        for y in 0..5 {
            for x in 0..4 {
                assert_eq!(c.get(x, y), img.get(x + 3, y + 2));
            }
        }
        assert!(img.crop(7, 0, 4, 1).is_err());
    }

    #[test]
    fn mask_rejects_out_of_range_class() {
        assert!(matches!(ClassMask::from_raw(2, 1, vec![0, 3]), Err(Error::Class { index: 3, .. })));
    }
}

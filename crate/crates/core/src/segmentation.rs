//! Pore segmentation of stained thin-section imagery in HSV space.

use std::path::Path;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Canonical epoxy-blue used when painting pore pixels.
pub const PORE_COLOR: [f32; 3] = [0.15, 0.35, 0.85];
/// Canonical grain color used when painting solid pixels.
pub const SOLID_COLOR: [f32; 3] = [0.76, 0.66, 0.50];

/// RGB raster with channels in `[0, 1]`, stored row-major and interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct ColorImage {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl ColorImage {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Domain(format!(
                "image must be non-empty, got {height}x{width}"
            )));
        }
        if data.len() != height * width * 3 {
            return Err(Error::Domain(format!(
                "expected {} channel values for {height}x{width}, got {}",
                height * width * 3,
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Domain(format!("channel value {v} outside [0, 1]")));
        }
        Ok(Self { height, width, data })
    }

    /// Uniform image filled with one color.
    pub fn filled(height: usize, width: usize, rgb: [f32; 3]) -> Result<Self> {
        Self::new(height, width, rgb.repeat(height * width))
    }

    pub(crate) fn from_raw_unchecked(height: usize, width: usize, data: Vec<f32>) -> Self {
        debug_assert_eq!(data.len(), height * width * 3);
        Self { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn pixels(&self) -> impl Iterator<Item = [f32; 3]> + '_ {
        self.data.chunks_exact(3).map(|p| [p[0], p[1], p[2]])
    }

    /// 8-bit ingest: every channel is divided by 255.
    pub fn from_rgb8(img: &RgbImage) -> Self {
        let (w, h) = img.dimensions();
        let data = img.as_raw().iter().map(|&b| b as f32 / 255.0).collect();
        Self::from_raw_unchecked(h as usize, w as usize, data)
    }

    pub fn to_rgb8(&self) -> RgbImage {
        let raw = self
            .data
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        RgbImage::from_raw(self.width as u32, self.height as u32, raw).expect("buffer size")
    }

    /// Reads an 8-bit RGB or RGBA PNG; alpha is discarded.
    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|e| Error::image(path, e))?;
        Ok(Self::from_rgb8(&img.to_rgb8()))
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_rgb8()
            .save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| Error::image(path, e))
    }

    /// Square window with top-left corner at `(y, x)`.
    pub fn crop(&self, y: usize, x: usize, size: usize) -> Self {
        assert!(
            y + size <= self.height && x + size <= self.width,
            "crop out of bounds"
        );
        let mut data = Vec::with_capacity(size * size * 3);
        for row in y..y + size {
            let start = (row * self.width + x) * 3;
            data.extend_from_slice(&self.data[start..start + size * 3]);
        }
        Self::from_raw_unchecked(size, size, data)
    }
}

/// Hue/saturation/value triple; hue is a fraction of a full turn in `[0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hsv {
    pub hue: f64,
    pub sat: f64,
    pub val: f64,
}

/// Hexcone RGB to HSV conversion. Achromatic pixels get hue 0.
pub fn rgb_to_hsv(rgb: [f64; 3]) -> Result<Hsv> {
    if let Some(v) = rgb.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::Domain(format!("channel value {v} outside [0, 1]")));
    }
    Ok(hsv_unchecked(rgb))
}

fn hsv_unchecked([r, g, b]: [f64; 3]) -> Hsv {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let sat = if max > 0.0 { delta / max } else { 0.0 };
    let hue = if delta == 0.0 {
        0.0
    } else if max == r {
        let h = (g - b) / delta / 6.0;
        if h < 0.0 {
            h + 1.0
        } else {
            h
        }
    } else if max == g {
        ((b - r) / delta + 2.0) / 6.0
    } else {
        ((r - g) / delta + 4.0) / 6.0
    };
    // (g - b) / delta can round to exactly -0.0 + 1.0
    let hue = if hue >= 1.0 { 0.0 } else { hue };
    Hsv { hue, sat, val: max }
}

/// Pore color window in HSV space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HsvThresholds {
    pub hue_lo: f64,
    pub hue_hi: f64,
    pub sat_min: f64,
    pub val_min: f64,
}

impl Default for HsvThresholds {
    fn default() -> Self {
        Self {
            hue_lo: 0.50,
            hue_hi: 0.75,
            sat_min: 0.25,
            val_min: 0.20,
        }
    }
}

impl HsvThresholds {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("hue_lo", self.hue_lo), ("hue_hi", self.hue_hi)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::Config(format!("{name} = {v} outside [0, 1)")));
            }
        }
        for (name, v) in [("sat_min", self.sat_min), ("val_min", self.val_min)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} = {v} outside [0, 1]")));
            }
        }
        Ok(())
    }

    /// Hue band membership; `hue_lo > hue_hi` wraps through 1.0 -> 0.0.
    pub fn hue_in_band(&self, hue: f64) -> bool {
        if self.hue_lo <= self.hue_hi {
            self.hue_lo <= hue && hue <= self.hue_hi
        } else {
            hue >= self.hue_lo || hue <= self.hue_hi
        }
    }

    pub fn is_pore(&self, hsv: Hsv) -> bool {
        self.hue_in_band(hsv.hue) && hsv.sat >= self.sat_min && hsv.val >= self.val_min
    }
}

/// Binary pore raster (`true` = pore).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoreMask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl PoreMask {
    pub fn new(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != height * width {
            return Err(Error::Domain(format!(
                "mask of {height}x{width} needs {} bits, got {}",
                height * width,
                bits.len()
            )));
        }
        Ok(Self { height, width, bits })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn count_pores(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn complement(&self) -> Self {
        Self {
            height: self.height,
            width: self.width,
            bits: self.bits.iter().map(|b| !b).collect(),
        }
    }

    /// Paint pores and solids with the canonical colors.
    pub fn paint(&self) -> ColorImage {
        let mut data = Vec::with_capacity(self.bits.len() * 3);
        for &b in &self.bits {
            data.extend_from_slice(if b { &PORE_COLOR } else { &SOLID_COLOR });
        }
        ColorImage::from_raw_unchecked(self.height, self.width, data)
    }
}

/// Pore area fraction in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Porosity(f64);

impl Porosity {
    pub fn new(value: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::Domain(format!("porosity {value} outside [0, 1]")));
        }
        Ok(Self(value))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

pub fn segment_pores(img: &ColorImage, th: &HsvThresholds) -> Result<PoreMask> {
    th.validate()?;
    let bits = img
        .pixels()
        .map(|[r, g, b]| th.is_pore(hsv_unchecked([r as f64, g as f64, b as f64])))
        .collect();
    PoreMask::new(img.height(), img.width(), bits)
}

pub fn porosity_of(mask: &PoreMask) -> Result<Porosity> {
    if mask.bits.is_empty() {
        return Err(Error::Domain("porosity of an empty mask".into()));
    }
    Porosity::new(mask.count_pores() as f64 / mask.bits.len() as f64)
}

/// Segment with `th` and return the pore fraction.
pub fn measure_porosity(img: &ColorImage, th: &HsvThresholds) -> Result<Porosity> {
    porosity_of(&segment_pores(img, th)?)
}

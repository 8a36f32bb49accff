//! Tiny raster drawing helpers for the diagnostic figures.

use std::path::Path;

use image::{Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::segmentation::ColorImage;

pub const WHITE: Rgb<u8> = Rgb([255, 255, 255]);
pub const BLACK: Rgb<u8> = Rgb([0, 0, 0]);
pub const LIGHT_GRAY: Rgb<u8> = Rgb([225, 225, 225]);
pub const GRAY: Rgb<u8> = Rgb([150, 150, 150]);
pub const GREEN: Rgb<u8> = Rgb([30, 160, 60]);
pub const RED: Rgb<u8> = Rgb([210, 40, 40]);
pub const BLUE: Rgb<u8> = Rgb([30, 70, 200]);

pub struct Canvas {
    pub img: RgbImage,
}

impl Canvas {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            img: RgbImage::from_pixel(width, height, WHITE),
        }
    }

    pub fn width(&self) -> i64 {
        self.img.width() as i64
    }

    pub fn height(&self) -> i64 {
        self.img.height() as i64
    }

    pub fn put(&mut self, x: i64, y: i64, c: Rgb<u8>) {
        if x >= 0 && y >= 0 && x < self.width() && y < self.height() {
            self.img.put_pixel(x as u32, y as u32, c);
        }
    }

    pub fn fill_rect(&mut self, x0: i64, y0: i64, x1: i64, y1: i64, c: Rgb<u8>) {
        for y in y0.min(y1)..=y0.max(y1) {
            for x in x0.min(x1)..=x0.max(x1) {
                self.put(x, y, c);
            }
        }
    }

    /// Bresenham line.
    pub fn line(&mut self, x0: i64, y0: i64, x1: i64, y1: i64, c: Rgb<u8>) {
        let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
        let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
        let (mut x, mut y, mut err) = (x0, y0, dx + dy);
        loop {
            self.put(x, y, c);
            if x == x1 && y == y1 {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x += sx;
            }
            if e2 <= dx {
                err += dx;
                y += sy;
            }
        }
    }

    pub fn thick_line(&mut self, x0: i64, y0: i64, x1: i64, y1: i64, c: Rgb<u8>) {
        for d in -1..=1 {
            self.line(x0 + d, y0, x1 + d, y1, c);
            self.line(x0, y0 + d, x1, y1 + d, c);
        }
    }

    pub fn disc(&mut self, cx: i64, cy: i64, r: i64, c: Rgb<u8>) {
        for y in -r..=r {
            for x in -r..=r {
                if x * x + y * y <= r * r {
                    self.put(cx + x, cy + y, c);
                }
            }
        }
    }

    pub fn frame(&mut self, x0: i64, y0: i64, x1: i64, y1: i64, c: Rgb<u8>) {
        self.line(x0, y0, x1, y0, c);
        self.line(x1, y0, x1, y1, c);
        self.line(x1, y1, x0, y1, c);
        self.line(x0, y1, x0, y0, c);
    }

    /// Nearest-neighbor resample of `src` into a `size x size` box.
    pub fn blit(&mut self, src: &ColorImage, x0: i64, y0: i64, size: i64) {
        for y in 0..size {
            for x in 0..size {
                let sy = (y as usize * src.height()) / size as usize;
                let sx = (x as usize * src.width()) / size as usize;
                let p = src
                    .pixel(sy, sx)
                    .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8);
                self.put(x0 + x, y0 + y, Rgb(p));
            }
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.img
            .save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| Error::image(path, e))
    }
}

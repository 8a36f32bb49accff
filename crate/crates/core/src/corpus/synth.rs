//! Procedural stand-in for stained thin-section tiles with exact ground truth.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::segmentation::{ColorImage, PoreMask, PORE_COLOR, SOLID_COLOR};

/// Second endpoint of the grain palette (cool gray). Every grain color
/// keeps `r >= g >= b`, so its hue stays in `[0, 1/6]`.
const GRAIN_GRAY: [f32; 3] = [0.62, 0.60, 0.56];

/// Default blur radius for a tile edge length.
pub fn default_blur_radius(tile_size: usize) -> usize {
    (tile_size / 16).max(1)
}

/// Periodic separable Gaussian blur, `sigma = radius / 2`, support `±radius`.
fn blur_periodic(field: &[f64], n: usize, radius: usize) -> Vec<f64> {
    if radius == 0 {
        return field.to_vec();
    }
    let sigma = radius as f64 / 2.0;
    let kernel: Vec<f64> = (-(radius as isize)..=radius as isize)
        .map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f64 = kernel.iter().sum();
    let r = radius as isize;
    let wrap = |i: isize| i.rem_euclid(n as isize) as usize;
    let mut tmp = vec![0.0; n * n];
    for y in 0..n {
        for x in 0..n {
            tmp[y * n + x] = kernel
                .iter()
                .enumerate()
                .map(|(j, w)| w * field[y * n + wrap(x as isize + j as isize - r)])
                .sum::<f64>()
                / norm;
        }
    }
    let mut out = vec![0.0; n * n];
    for y in 0..n {
        for x in 0..n {
            out[y * n + x] = kernel
                .iter()
                .enumerate()
                .map(|(j, w)| w * tmp[wrap(y as isize + j as isize - r) * n + x])
                .sum::<f64>()
                / norm;
        }
    }
    out
}

fn smooth_noise(rng: &mut ChaCha8Rng, n: usize, radius: usize) -> Vec<f64> {
    let white: Vec<f64> = (0..n * n).map(|_| rng.sample(StandardNormal)).collect();
    blur_periodic(&white, n, radius)
}

/// Number of pore pixels a tile of edge `tile_size` gets for `target_phi`.
pub fn pore_pixel_count(target_phi: f64, tile_size: usize) -> usize {
    (target_phi * (tile_size * tile_size) as f64).round() as usize
}

/// Generate a seeded tile whose pore mask has exactly
/// `round(target_phi * S^2)` pixels.
///
/// Pores are the highest-valued pixels of a blurred noise field (ties
/// broken by pixel index) painted epoxy blue; everything else is painted
/// from a tan/gray grain palette. Returns the image and its ground-truth mask.
pub fn synth_tile(
    seed: u64,
    target_phi: f64,
    tile_size: usize,
    blur_radius: usize,
) -> Result<(ColorImage, PoreMask)> {
    if !(0.0..=1.0).contains(&target_phi) {
        return Err(Error::Domain(format!(
            "target porosity {target_phi} outside [0, 1]"
        )));
    }
    if tile_size == 0 {
        return Err(Error::Domain("tile size must be positive".into()));
    }
    let n = tile_size;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pore_field = smooth_noise(&mut rng, n, blur_radius);
    let grain_field = smooth_noise(&mut rng, n, blur_radius.max(1) * 2);

    let mut order: Vec<usize> = (0..n * n).collect();
    order.sort_by(|&a, &b| pore_field[b].total_cmp(&pore_field[a]).then(a.cmp(&b)));
    let mut bits = vec![false; n * n];
    for &i in &order[..pore_pixel_count(target_phi, n)] {
        bits[i] = true;
    }

    let (gmin, gmax) = grain_field
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let span = (gmax - gmin).max(1e-12);
    let mut data = Vec::with_capacity(n * n * 3);
    for (i, &pore) in bits.iter().enumerate() {
        let jitter: f32 = rng.random_range(0.85..=1.0);
        if pore {
            data.extend(PORE_COLOR.map(|c| c * jitter));
        } else {
            let t = ((grain_field[i] - gmin) / span) as f32;
            let shade = 0.9 + 0.1 * jitter;
            for c in 0..3 {
                data.push((SOLID_COLOR[c] * (1.0 - t) + GRAIN_GRAY[c] * t) * shade);
            }
        }
    }
    let image = ColorImage::new(n, n, data)?;
    let mask = PoreMask::new(n, n, bits)?;
    Ok((image, mask))
}

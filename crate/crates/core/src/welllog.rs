//! Well-log guided synthesis: map a depth/porosity curve to generated
//! thin-section images and draw them next to the curve.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cgan::{ConditionLabel, LatentVector};
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::render::{Canvas, BLACK, BLUE, GRAY, LIGHT_GRAY};
use crate::seed::derive_seed;
use crate::segmentation::{measure_porosity, ColorImage, HsvThresholds};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub depth_m: f64,
    pub porosity: f64,
}

/// Depth-ordered porosity log of one well.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WellLog {
    pub well_id: String,
    records: Vec<LogRecord>,
}

impl WellLog {
    /// Depths must be finite and strictly increasing, porosities in [0, 1].
    pub fn new(well_id: impl Into<String>, records: Vec<LogRecord>) -> Result<Self> {
        for (i, r) in records.iter().enumerate() {
            check_record(r, i + 1)?;
            if i > 0 && r.depth_m <= records[i - 1].depth_m {
                return Err(non_monotonic(i + 1, r.depth_m, records[i - 1].depth_m));
            }
        }
        Ok(Self {
            well_id: well_id.into(),
            records,
        })
    }

    pub fn records(&self) -> &[LogRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

fn check_record(r: &LogRecord, row: usize) -> Result<()> {
    if !r.depth_m.is_finite() {
        return Err(Error::Data(format!(
            "row {row}: depth {} is not finite",
            r.depth_m
        )));
    }
    if !(0.0..=1.0).contains(&r.porosity) {
        return Err(Error::Data(format!(
            "row {row}: porosity {} outside [0, 1]",
            r.porosity
        )));
    }
    Ok(())
}

fn non_monotonic(row: usize, depth: f64, prev: f64) -> Error {
    Error::Data(format!(
        "row {row}: depth {depth} m does not increase (previous row is {prev} m)"
    ))
}

/// Read a `depth_m,porosity` CSV. Rows are numbered from 1 after the header.
/// The well id is the file stem.
pub fn load_log(path: &Path) -> Result<WellLog> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let headers = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    if headers.len() != 2 || &headers[0] != "depth_m" || &headers[1] != "porosity" {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: format!(
                "expected header `depth_m,porosity`, found `{}`",
                headers.iter().collect::<Vec<_>>().join(",")
            ),
        });
    }
    let mut records = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row.map_err(|e| csv_error(path, e))?;
        let line = row.position().map_or(i as u64 + 2, |p| p.line());
        let field = |j: usize, name: &str| -> Result<f64> {
            row.get(j)
                .ok_or_else(|| parse_at(path, line, format!("missing {name}")))?
                .parse::<f64>()
                .map_err(|e| parse_at(path, line, format!("bad {name} `{}`: {e}", &row[j])))
        };
        let rec = LogRecord {
            depth_m: field(0, "depth_m")?,
            porosity: field(1, "porosity")?,
        };
        check_record(&rec, i + 1)?;
        if let Some(prev) = records.last().map(|r: &LogRecord| r.depth_m) {
            if rec.depth_m <= prev {
                return Err(non_monotonic(i + 1, rec.depth_m, prev));
            }
        }
        records.push(rec);
    }
    let well_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "well".into());
    WellLog::new(well_id, records)
}

fn parse_at(path: &Path, line: u64, message: String) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        kind => parse_at(path, line, format!("{kind:?}")),
    }
}

/// Write a log back out in the format [`load_log`] reads.
pub fn write_log(log: &WellLog, path: &Path) -> Result<()> {
    let mut out = String::from("depth_m,porosity\n");
    for r in &log.records {
        out.push_str(&format!("{},{}\n", r.depth_m, r.porosity));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackSample {
    /// Relative to the track directory.
    pub path: String,
    pub seed: u64,
    pub measured_porosity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackEntry {
    pub depth_m: f64,
    pub input_porosity: f64,
    pub class_index: usize,
    /// Bin midpoint of `class_index`.
    pub representative_porosity: f64,
    pub samples: Vec<TrackSample>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackManifest {
    pub version: u32,
    pub well_id: String,
    pub checkpoint_digest: String,
    pub k_per_depth: usize,
    pub seed: u64,
    pub thresholds: HsvThresholds,
    pub entries: Vec<TrackEntry>,
}

impl TrackManifest {
    pub fn to_json(&self) -> Vec<u8> {
        let mut bytes = serde_json::to_vec_pretty(self).expect("manifest serializes");
        bytes.push(b'\n');
        bytes
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackOptions {
    pub k_per_depth: usize,
    pub seed: u64,
    pub thresholds: HsvThresholds,
    pub allow_untrained: bool,
}

impl Default for TrackOptions {
    fn default() -> Self {
        Self {
            k_per_depth: 1,
            seed: 0,
            thresholds: HsvThresholds::default(),
            allow_untrained: false,
        }
    }
}

pub const MANIFEST_FILE: &str = "track_manifest.json";
pub const FIGURE_FILE: &str = "track.png";

/// Latent seed of draw `j` at `depth_m`.
pub fn depth_seed(seed: u64, depth_m: f64, j: usize) -> u64 {
    derive_seed(&[seed, depth_m.to_bits(), j as u64])
}

/// `depth_<d>.png` with millimetre resolution; `_<j>` is appended when more
/// than one image is drawn per depth.
pub fn image_name(depth_m: f64, j: usize, k_per_depth: usize) -> String {
    if k_per_depth == 1 {
        format!("depth_{depth_m:.3}.png")
    } else {
        format!("depth_{depth_m:.3}_{j}.png")
    }
}

/// A generated track held in memory.
pub struct Track {
    pub manifest: TrackManifest,
    /// Same order as the manifest samples, entry by entry.
    pub images: Vec<Vec<ColorImage>>,
}

/// Generate every depth of `log`. Nothing is written; see [`write_track`].
pub fn synthesize_track(log: &WellLog, ckpt: &Checkpoint, opts: &TrackOptions) -> Result<Track> {
    if opts.k_per_depth == 0 {
        return Err(Error::Config("k_per_depth must be >= 1".into()));
    }
    if ckpt.epoch == 0 && !opts.allow_untrained {
        return Err(Error::Checkpoint("checkpoint is untrained (epoch 0)".into()));
    }
    opts.thresholds.validate()?;
    let names: BTreeSet<String> = log
        .records
        .iter()
        .map(|r| image_name(r.depth_m, 0, opts.k_per_depth))
        .collect();
    if names.len() != log.len() {
        return Err(Error::Data("log depths collide at millimetre resolution".into()));
    }
    let results: Vec<Result<(TrackEntry, Vec<ColorImage>)>> = log
        .records
        .par_iter()
        .map(|r| synthesize_depth(r, ckpt, opts))
        .collect();
    let mut entries = Vec::with_capacity(log.len());
    let mut images = Vec::with_capacity(log.len());
    for r in results {
        let (e, imgs) = r?;
        entries.push(e);
        images.push(imgs);
    }
    Ok(Track {
        manifest: TrackManifest {
            version: 1,
            well_id: log.well_id.clone(),
            checkpoint_digest: ckpt.digest(),
            k_per_depth: opts.k_per_depth,
            seed: opts.seed,
            thresholds: opts.thresholds,
            entries,
        },
        images,
    })
}

/// One depth, independent of every other depth.
pub fn synthesize_depth(
    r: &LogRecord,
    ckpt: &Checkpoint,
    opts: &TrackOptions,
) -> Result<(TrackEntry, Vec<ColorImage>)> {
    let binning = ckpt.binning.clone().with_clamp(true);
    let class = binning.bin_for(r.porosity)?;
    let generator = &ckpt.networks.generator;
    let seeds: Vec<u64> = (0..opts.k_per_depth)
        .map(|j| depth_seed(opts.seed, r.depth_m, j))
        .collect();
    let latents: Vec<LatentVector> = seeds
        .iter()
        .map(|&s| LatentVector::sample(generator.config().latent_dim, s))
        .collect();
    let generated = generator.generate(&latents, &vec![ConditionLabel(class); latents.len()])?;
    let mut samples = Vec::with_capacity(seeds.len());
    let mut images = Vec::with_capacity(seeds.len());
    for (j, (img, &seed)) in generated.iter().zip(&seeds).enumerate() {
        // Measure what ends up on disk.
        let img = ColorImage::from_rgb8(&img.to_color().to_rgb8());
        samples.push(TrackSample {
            path: format!("images/{}", image_name(r.depth_m, j, opts.k_per_depth)),
            seed,
            measured_porosity: measure_porosity(&img, &opts.thresholds)?.value(),
        });
        images.push(img);
    }
    Ok((
        TrackEntry {
            depth_m: r.depth_m,
            input_porosity: r.porosity,
            class_index: class,
            representative_porosity: binning.midpoint(class),
            samples,
        },
        images,
    ))
}

/// Write images, `track_manifest.json` and `track.png` under `dir`.
pub fn write_track(track: &Track, log: &WellLog, dir: &Path) -> Result<PathBuf> {
    let images_dir = dir.join("images");
    fs::create_dir_all(&images_dir).map_err(|e| Error::io(&images_dir, e))?;
    for (entry, imgs) in track.manifest.entries.iter().zip(&track.images) {
        for (s, img) in entry.samples.iter().zip(imgs) {
            img.save_png(&dir.join(&s.path))?;
        }
    }
    let manifest_path = dir.join(MANIFEST_FILE);
    fs::write(&manifest_path, track.manifest.to_json()).map_err(|e| Error::io(&manifest_path, e))?;
    let figure = render_track(&track.manifest, log, dir)?;
    let figure_path = dir.join(FIGURE_FILE);
    figure.save(&figure_path)?;
    Ok(manifest_path)
}

const THUMB: i64 = 72;
const GAP: i64 = 6;

/// Draw the porosity curve against depth (depth down the page) with the
/// first image of every manifest entry placed beside it and a leader line
/// from the curve to the thumbnail. Images are read from `dir`.
pub fn render_track(manifest: &TrackManifest, log: &WellLog, dir: &Path) -> Result<Canvas> {
    let log_depths: BTreeSet<u64> = log.records.iter().map(|r| r.depth_m.to_bits()).collect();
    let shown: Vec<&TrackEntry> = manifest
        .entries
        .iter()
        .filter(|e| log_depths.contains(&e.depth_m.to_bits()) && !e.samples.is_empty())
        .collect();
    if shown.is_empty() || log.is_empty() {
        return Err(Error::Data("track manifest and well log share no depths".into()));
    }
    let thumbs = shown
        .iter()
        .map(|e| ColorImage::load_png(&dir.join(&e.samples[0].path)))
        .collect::<Result<Vec<_>>>()?;

    let (top, bottom) = (30i64, 40i64);
    let plot_h = (shown.len() as i64 * (THUMB + GAP)).max(600);
    let h = top + plot_h + bottom;
    let (plot_l, plot_r) = (70i64, 330i64);
    let thumb_x = 480i64;
    let w = thumb_x + THUMB + 30;
    let mut cv = Canvas::new(w as u32, h as u32);

    let d0 = log.records[0].depth_m;
    let d1 = log.records[log.len() - 1].depth_m;
    let span = (d1 - d0).max(1e-9);
    let y_of = |d: f64| top + ((d - d0) / span * plot_h as f64).round() as i64;
    let phi_max = log
        .records
        .iter()
        .map(|r| r.porosity)
        .fold(0.0f64, f64::max)
        .max(0.05)
        * 1.1;
    let x_of = |phi: f64| plot_l + (phi / phi_max * (plot_r - plot_l) as f64).round() as i64;

    // Axes and porosity gridlines every 0.1.
    let mut g = 0.1;
    while g < phi_max {
        cv.line(x_of(g), top, x_of(g), top + plot_h, LIGHT_GRAY);
        g += 0.1;
    }
    cv.frame(plot_l, top, plot_r, top + plot_h, BLACK);
    for r in &log.records {
        cv.line(plot_l - 5, y_of(r.depth_m), plot_l, y_of(r.depth_m), BLACK);
    }

    for pair in log.records.windows(2) {
        cv.thick_line(
            x_of(pair[0].porosity),
            y_of(pair[0].depth_m),
            x_of(pair[1].porosity),
            y_of(pair[1].depth_m),
            BLUE,
        );
    }
    for r in &log.records {
        cv.disc(x_of(r.porosity), y_of(r.depth_m), 3, BLUE);
    }

    // Thumbnails stack down the right column in depth order.
    let slot = plot_h as f64 / shown.len() as f64;
    for (i, (e, img)) in shown.iter().zip(&thumbs).enumerate() {
        let ty = top + (slot * (i as f64 + 0.5)).round() as i64 - THUMB / 2;
        let (px, py) = (x_of(e.input_porosity), y_of(e.depth_m));
        cv.line(px, py, plot_r + 10, py, GRAY);
        cv.line(plot_r + 10, py, thumb_x - 4, ty + THUMB / 2, GRAY);
        cv.blit(img, thumb_x, ty, THUMB);
        cv.frame(thumb_x - 1, ty - 1, thumb_x + THUMB, ty + THUMB, BLACK);
    }
    Ok(cv)
}

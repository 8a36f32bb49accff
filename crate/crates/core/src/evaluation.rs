//! Porosity-based validation of a conditional generator.
//!
//! For every class, generate seeded samples, segment them with the corpus
//! thresholds and check the measured porosity against the class range
//! widened by a margin.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cgan::{ConditionLabel, Generator, LatentVector};
use crate::checkpoint::Checkpoint;
use crate::corpus::{hex_digest, PorosityBinning};
use crate::error::{Error, Result};
use crate::render::{Canvas, BLACK, GRAY, GREEN, LIGHT_GRAY, RED};
use crate::seed::derive_seed;
use crate::segmentation::{measure_porosity, ColorImage, HsvThresholds};
use crate::stats::spearman;

/// How the acceptance window around a class range is widened.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MarginMode {
    /// `m` is a fraction of the bin width added on both sides.
    #[default]
    Relative,
    /// `m` is an absolute porosity tolerance added on both sides.
    Absolute,
}

/// `lo - m (hi - lo) <= phi <= hi + m (hi - lo)`.
pub fn within_margin(phi: f64, bin: (f64, f64), m: f64) -> bool {
    within_margin_mode(phi, bin, m, MarginMode::Relative)
}

pub fn within_margin_mode(phi: f64, (lo, hi): (f64, f64), m: f64, mode: MarginMode) -> bool {
    let pad = match mode {
        MarginMode::Relative => m * (hi - lo),
        MarginMode::Absolute => m,
    };
    lo - pad <= phi && phi <= hi + pad
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationRecord {
    pub class_index: usize,
    pub target_lo: f64,
    pub target_hi: f64,
    pub sample_id: String,
    pub measured_porosity: f64,
    pub within_margin: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub per_class_accuracy: Vec<f64>,
    pub per_class_mean_porosity: Vec<f64>,
    pub overall_accuracy: f64,
    /// Rank correlation between class index and per-class mean porosity.
    pub class_porosity_spearman: Option<f64>,
    pub margin: f64,
    pub margin_mode: MarginMode,
    pub n_per_class: usize,
    pub seed: u64,
    pub config_digest: String,
    pub records: Vec<ValidationRecord>,
}

impl ValidationReport {
    fn from_records(
        records: Vec<ValidationRecord>,
        k: usize,
        margin: f64,
        margin_mode: MarginMode,
        n_per_class: usize,
        seed: u64,
        config_digest: String,
    ) -> Self {
        let mut hits = vec![0usize; k];
        let mut totals = vec![0usize; k];
        let mut sums = vec![0.0; k];
        for r in &records {
            totals[r.class_index] += 1;
            hits[r.class_index] += r.within_margin as usize;
            sums[r.class_index] += r.measured_porosity;
        }
        let per_class_accuracy: Vec<f64> = (0..k)
            .map(|c| {
                if totals[c] == 0 {
                    0.0
                } else {
                    hits[c] as f64 / totals[c] as f64
                }
            })
            .collect();
        let per_class_mean_porosity: Vec<f64> = (0..k)
            .map(|c| {
                if totals[c] == 0 {
                    0.0
                } else {
                    sums[c] / totals[c] as f64
                }
            })
            .collect();
        let overall_accuracy = if records.is_empty() {
            0.0
        } else {
            hits.iter().sum::<usize>() as f64 / records.len() as f64
        };
        let class_axis: Vec<f64> = (0..k).map(|c| c as f64).collect();
        Self {
            class_porosity_spearman: spearman(&class_axis, &per_class_mean_porosity),
            per_class_accuracy,
            per_class_mean_porosity,
            overall_accuracy,
            margin,
            margin_mode,
            n_per_class,
            seed,
            config_digest,
            records,
        }
    }

    /// Re-apply the margin rule with a different margin on the same samples.
    pub fn rescore(&self, margin: f64, mode: MarginMode) -> Self {
        let records = self
            .records
            .iter()
            .map(|r| ValidationRecord {
                within_margin: within_margin_mode(
                    r.measured_porosity,
                    (r.target_lo, r.target_hi),
                    margin,
                    mode,
                ),
                ..r.clone()
            })
            .collect();
        Self::from_records(
            records,
            self.per_class_accuracy.len(),
            margin,
            mode,
            self.n_per_class,
            self.seed,
            self.config_digest.clone(),
        )
    }

    pub fn to_json(&self) -> Vec<u8> {
        let mut bytes = serde_json::to_vec_pretty(self).expect("report serializes");
        bytes.push(b'\n');
        bytes
    }
}

/// Anything that can produce a color image for a class and sample seed.
pub trait SampleSource: Sync {
    fn sample(&self, class: usize, latent_seed: u64) -> Result<ColorImage>;

    /// Batched variant; must equal repeated [`SampleSource::sample`] calls.
    fn sample_many(&self, class: usize, latent_seeds: &[u64]) -> Result<Vec<ColorImage>> {
        latent_seeds.iter().map(|&s| self.sample(class, s)).collect()
    }
}

impl SampleSource for Generator<f32> {
    fn sample(&self, class: usize, latent_seed: u64) -> Result<ColorImage> {
        let z = LatentVector::sample(self.config().latent_dim, latent_seed);
        Ok(self.generate_one(&z, ConditionLabel(class))?.to_color())
    }

    fn sample_many(&self, class: usize, latent_seeds: &[u64]) -> Result<Vec<ColorImage>> {
        let l = self.config().latent_dim;
        let zs: Vec<LatentVector> = latent_seeds.iter().map(|&s| LatentVector::sample(l, s)).collect();
        let labels = vec![ConditionLabel(class); zs.len()];
        Ok(self
            .generate(&zs, &labels)?
            .iter()
            .map(|img| img.to_color())
            .collect())
    }
}

/// Latent seed of sample `i` of class `c`.
pub fn latent_seed(seed: u64, class: usize, i: usize) -> u64 {
    derive_seed(&[seed, class as u64, i as u64, 0xe7a1])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidationOptions {
    pub n_per_class: usize,
    pub seed: u64,
    pub margin: f64,
    pub margin_mode: MarginMode,
    pub thresholds: HsvThresholds,
    pub allow_untrained: bool,
}

impl Default for ValidationOptions {
    fn default() -> Self {
        Self {
            n_per_class: 100,
            seed: 0,
            margin: 0.10,
            margin_mode: MarginMode::Relative,
            thresholds: HsvThresholds::default(),
            allow_untrained: false,
        }
    }
}

const GENERATION_CHUNK: usize = 25;

/// Validate any sample source against `binning`.
pub fn validate_source(
    source: &dyn SampleSource,
    binning: &PorosityBinning,
    opts: &ValidationOptions,
    config_digest: &str,
) -> Result<ValidationReport> {
    if opts.n_per_class == 0 {
        return Err(Error::Config("n_per_class must be >= 1".into()));
    }
    if opts.margin.is_nan() || opts.margin < 0.0 {
        return Err(Error::Config(format!("margin {} must be >= 0", opts.margin)));
    }
    opts.thresholds.validate()?;
    let k = binning.num_classes();
    let jobs: Vec<(usize, usize)> = (0..k)
        .flat_map(|c| {
            (0..opts.n_per_class)
                .step_by(GENERATION_CHUNK)
                .map(move |s| (c, s))
        })
        .collect();
    let chunks: Vec<Result<Vec<ValidationRecord>>> = jobs
        .into_par_iter()
        .map(|(class, start)| {
            let end = (start + GENERATION_CHUNK).min(opts.n_per_class);
            let seeds: Vec<u64> = (start..end).map(|i| latent_seed(opts.seed, class, i)).collect();
            let images = source.sample_many(class, &seeds)?;
            let range = binning.range(class);
            images
                .iter()
                .enumerate()
                .map(|(j, img)| {
                    let phi = measure_porosity(img, &opts.thresholds)?.value();
                    Ok(ValidationRecord {
                        class_index: class,
                        target_lo: range.0,
                        target_hi: range.1,
                        sample_id: format!("c{class:02}_{:05}", start + j),
                        measured_porosity: phi,
                        within_margin: within_margin_mode(phi, range, opts.margin, opts.margin_mode),
                    })
                })
                .collect()
        })
        .collect();
    let mut records = Vec::with_capacity(k * opts.n_per_class);
    for chunk in chunks {
        records.extend(chunk?);
    }
    let digest_input = serde_json::json!({
        "model": config_digest,
        "n_per_class": opts.n_per_class,
        "seed": opts.seed,
        "margin": opts.margin,
        "margin_mode": opts.margin_mode,
        "thresholds": opts.thresholds,
        "binning": binning,
    });
    Ok(ValidationReport::from_records(
        records,
        k,
        opts.margin,
        opts.margin_mode,
        opts.n_per_class,
        opts.seed,
        hex_digest(digest_input.to_string().as_bytes()),
    ))
}

/// Validate a checkpoint's generator. Untrained checkpoints are refused
/// unless `allow_untrained` is set.
pub fn validate(ckpt: &Checkpoint, opts: &ValidationOptions) -> Result<ValidationReport> {
    if ckpt.epoch == 0 && !opts.allow_untrained {
        return Err(Error::Checkpoint(
            "checkpoint is untrained (epoch 0); pass --allow-untrained to validate anyway".into(),
        ));
    }
    validate_source(&ckpt.networks.generator, &ckpt.binning, opts, &ckpt.digest())
}

/// Write `scatter.csv` and `scatter.png` (accepted green, rejected red).
pub fn emit_scatter(report: &ValidationReport, dir: &Path) -> Result<()> {
    if report.records.is_empty() {
        return Err(Error::Data("cannot plot an empty report".into()));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let csv_path = dir.join("scatter.csv");
    let mut w =
        csv::Writer::from_path(&csv_path).map_err(|e| Error::io(&csv_path, std::io::Error::other(e)))?;
    w.write_record([
        "class_index",
        "target_lo",
        "target_hi",
        "measured_porosity",
        "accepted",
    ])
    .and_then(|_| {
        for r in &report.records {
            w.write_record([
                r.class_index.to_string(),
                r.target_lo.to_string(),
                r.target_hi.to_string(),
                r.measured_porosity.to_string(),
                r.within_margin.to_string(),
            ])?;
        }
        w.flush().map_err(csv::Error::from)
    })
    .map_err(|e| Error::io(&csv_path, std::io::Error::other(e)))?;

    render_scatter(report).save(&dir.join("scatter.png"))
}

fn render_scatter(report: &ValidationReport) -> Canvas {
    let k = report.per_class_accuracy.len().max(1);
    let (w, h) = (900i64, 600i64);
    let (left, right, top, bottom) = (60i64, 20i64, 20i64, 50i64);
    let mut cv = Canvas::new(w as u32, h as u32);
    let y_max = report
        .records
        .iter()
        .map(|r| r.measured_porosity.max(r.target_hi))
        .fold(0.0f64, f64::max)
        .max(1e-6)
        * 1.05;
    let px_y = |phi: f64| top + ((1.0 - phi / y_max) * (h - top - bottom) as f64).round() as i64;
    let slot = (w - left - right) as f64 / k as f64;
    let px_x = |c: usize, frac: f64| left + ((c as f64 + frac) * slot).round() as i64;

    let mut ranges = vec![None; k];
    for r in &report.records {
        ranges[r.class_index] = Some((r.target_lo, r.target_hi));
    }
    for (c, range) in ranges.iter().enumerate() {
        if let Some((lo, hi)) = range {
            let pad = match report.margin_mode {
                MarginMode::Relative => report.margin * (hi - lo),
                MarginMode::Absolute => report.margin,
            };
            cv.fill_rect(
                px_x(c, 0.1),
                px_y(hi + pad),
                px_x(c, 0.9),
                px_y((lo - pad).max(0.0)),
                LIGHT_GRAY,
            );
            cv.frame(px_x(c, 0.1), px_y(*hi), px_x(c, 0.9), px_y(*lo), GRAY);
        }
    }
    let mut seen = vec![0usize; k];
    for r in &report.records {
        let n = report.n_per_class.max(1);
        let frac = 0.15 + 0.7 * (seen[r.class_index] as f64 + 0.5) / n as f64;
        seen[r.class_index] += 1;
        let color = if r.within_margin { GREEN } else { RED };
        cv.disc(px_x(r.class_index, frac), px_y(r.measured_porosity), 2, color);
    }
    cv.line(left, top, left, h - bottom, BLACK);
    cv.line(left, h - bottom, w - right, h - bottom, BLACK);
    for c in 0..=k {
        let x = px_x(c, 0.0);
        cv.line(x, h - bottom, x, h - bottom + 6, BLACK);
    }
    let mut tick = 0.0;
    while tick <= y_max {
        let y = px_y(tick);
        cv.line(left - 6, y, left, y, BLACK);
        tick += 0.1;
    }
    cv
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::synth_tile;

    struct MidpointOracle(PorosityBinning);

    impl SampleSource for MidpointOracle {
        fn sample(&self, class: usize, latent_seed: u64) -> Result<ColorImage> {
            Ok(synth_tile(latent_seed, self.0.midpoint(class), 32, 2)?.0)
        }
    }

    struct AllSolid;

    impl SampleSource for AllSolid {
        fn sample(&self, _: usize, _: u64) -> Result<ColorImage> {
            ColorImage::filled(16, 16, crate::segmentation::SOLID_COLOR)
        }
    }

    fn opts(n: usize) -> ValidationOptions {
        ValidationOptions {
            n_per_class: n,
            seed: 4,
            ..Default::default()
        }
    }

    #[test]
    fn margin_rule_examples() {
        assert!(within_margin(0.30, (0.30, 0.375), 0.3));
        assert!(within_margin(0.3825, (0.30, 0.375), 0.10));
        assert!(!within_margin(0.383, (0.30, 0.375), 0.10));
        assert!(within_margin(0.375, (0.30, 0.375), 0.0));
        assert!(!within_margin(0.3751, (0.30, 0.375), 0.0));
        assert!(within_margin_mode(
            0.47,
            (0.30, 0.375),
            0.10,
            MarginMode::Absolute
        ));
    }

    #[test]
    fn midpoint_oracle_scores_perfectly() {
        let b = PorosityBinning::default();
        let r = validate_source(&MidpointOracle(b.clone()), &b, &opts(5), "oracle").unwrap();
        assert_eq!(r.overall_accuracy, 1.0);
        assert_eq!(r.records.len(), 50);
        assert_eq!(r.class_porosity_spearman, Some(1.0));
        for rec in &r.records {
            let want = crate::corpus::pore_pixel_count(b.midpoint(rec.class_index), 32) as f64 / 1024.0;
            assert_eq!(rec.measured_porosity, want);
        }
    }

    #[test]
    fn all_solid_stub_only_passes_class_zero() {
        let b = PorosityBinning::default();
        let r = validate_source(&AllSolid, &b, &opts(3), "solid").unwrap();
        assert!((r.overall_accuracy - 0.1).abs() < 1e-12);
        assert_eq!(r.per_class_accuracy[0], 1.0);
        assert!(r.per_class_accuracy[1..].iter().all(|&a| a == 0.0));
    }

    #[test]
    fn accuracy_is_monotone_in_margin() {
        let b = PorosityBinning::default();
        let r = validate_source(&AllSolid, &b, &opts(2), "solid").unwrap();
        let mut last = 0.0;
        for m in [0.0, 0.1, 0.5, 1.0, 2.0, 5.0] {
            let acc = r.rescore(m, MarginMode::Relative).overall_accuracy;
            assert!(acc >= last);
            last = acc;
        }
    }

    #[test]
    fn untrained_checkpoint_is_refused() {
        let cfg = crate::cgan::NetworkConfig {
            image_size: 16,
            base_channels: 2,
            latent_dim: 4,
            ..Default::default()
        };
        let ck = crate::checkpoint::init_networks(&cfg, 1).unwrap();
        assert!(matches!(validate(&ck, &opts(1)), Err(Error::Checkpoint(_))));
        let allowed = ValidationOptions {
            allow_untrained: true,
            ..opts(1)
        };
        let r = validate(&ck, &allowed).unwrap();
        assert_eq!(r.records.len(), 10);
        assert_eq!(r, validate(&ck, &allowed).unwrap());
    }

    #[test]
    fn scatter_outputs() {
        let b = PorosityBinning::default();
        let r = validate_source(&MidpointOracle(b.clone()), &b, &opts(4), "oracle").unwrap();
        let dir = tempfile::tempdir().unwrap();
        emit_scatter(&r, dir.path()).unwrap();
        let csv = fs::read_to_string(dir.path().join("scatter.csv")).unwrap();
        assert_eq!(csv.lines().count(), 41);
        assert!(!csv.contains(",false"));
        assert!(dir.path().join("scatter.png").exists());
    }
}

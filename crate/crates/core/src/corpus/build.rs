use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::balance::balance_classes;
use super::synth::synth_tile;
use super::tiles::{extract_tiles, Augmentation, ImageTile};
use super::{Corpus, PorosityBinning};
use crate::error::{Error, Result};
use crate::seed::derive_seed;
use crate::segmentation::{measure_porosity, ColorImage, HsvThresholds};

/// A named source photograph.
#[derive(Debug, Clone)]
pub struct SourceImage {
    pub id: String,
    pub image: ColorImage,
}

/// Recipe for a procedural corpus: `per_class` tiles at each class midpoint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub per_class: usize,
    pub tile_size: usize,
    pub blur_radius: usize,
}

#[derive(Debug, Clone)]
pub enum CorpusSource {
    Images(Vec<SourceImage>),
    Synthetic(SyntheticSpec),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BalanceOptions {
    /// Defaults to the largest class count.
    pub target_per_class: Option<usize>,
    pub downsample: bool,
}

#[derive(Debug, Clone)]
pub struct BuildOptions {
    pub binning: PorosityBinning,
    pub tile_size: usize,
    pub stride: usize,
    pub thresholds: HsvThresholds,
    pub balance: Option<BalanceOptions>,
    pub holdout_fraction: f64,
    pub seed: u64,
}

impl BuildOptions {
    pub fn new(tile_size: usize) -> Self {
        Self {
            binning: PorosityBinning::default(),
            tile_size,
            stride: tile_size,
            thresholds: HsvThresholds::default(),
            balance: Some(BalanceOptions {
                target_per_class: None,
                downsample: false,
            }),
            holdout_fraction: 0.0,
            seed: 0,
        }
    }
}

/// Every `*.png` directly under `dir`, in file-name order.
pub fn load_source_dir(dir: &Path) -> Result<Vec<SourceImage>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::new();
    for entry in entries {
        let p = entry.map_err(|e| Error::io(dir, e))?.path();
        if p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) {
            paths.push(p);
        }
    }
    paths.sort();
    paths
        .iter()
        .map(|p| {
            Ok(SourceImage {
                id: p.file_stem().unwrap_or_default().to_string_lossy().into_owned(),
                image: ColorImage::load_png(p)?,
            })
        })
        .collect()
}

struct Candidate {
    id: String,
    source_id: String,
    image: ColorImage,
}

/// Tile, label, bin and (optionally) balance a set of sources.
pub fn build_corpus(source: &CorpusSource, opts: &BuildOptions) -> Result<Corpus> {
    opts.thresholds.validate()?;
    if !(0.0..1.0).contains(&opts.holdout_fraction) {
        return Err(Error::Config(format!(
            "holdout fraction {} outside [0, 1)",
            opts.holdout_fraction
        )));
    }
    let candidates = match source {
        CorpusSource::Images(images) => {
            if images.is_empty() {
                return Err(Error::Data("no source images".into()));
            }
            let mut out = Vec::new();
            for src in images {
                for w in extract_tiles(&src.image, opts.tile_size, opts.stride)? {
                    out.push(Candidate {
                        id: format!("{}_r{:03}_c{:03}", src.id, w.row, w.col),
                        source_id: src.id.clone(),
                        image: w.image,
                    });
                }
            }
            out
        }
        CorpusSource::Synthetic(spec) => synthetic_candidates(spec, &opts.binning, opts.seed)?,
    };

    let tile_size = match source {
        CorpusSource::Synthetic(spec) => spec.tile_size,
        CorpusSource::Images(_) => opts.tile_size,
    };
    let labeled: Vec<Result<ImageTile>> = candidates
        .into_par_iter()
        .enumerate()
        .map(|(ordinal, c)| {
            let porosity = measure_porosity(&c.image, &opts.thresholds)?;
            let class_index = opts.binning.bin_for(porosity.value())?;
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[opts.seed, ordinal as u64, 0x401d]));
            let holdout = opts.holdout_fraction > 0.0 && rng.random::<f64>() < opts.holdout_fraction;
            Ok(ImageTile {
                id: c.id,
                image: c.image,
                porosity,
                class_index,
                source_id: c.source_id,
                augmentation: Augmentation::Original,
                holdout,
            })
        })
        .collect();
    let corpus = Corpus {
        tile_size,
        binning: opts.binning.clone(),
        tiles: labeled.into_iter().collect::<Result<_>>()?,
    };

    match opts.balance {
        None => Ok(corpus),
        Some(b) => {
            let counts = corpus.class_counts();
            if let Some(empty) = counts.iter().position(|&c| c == 0) {
                return Err(Error::Data(format!(
                    "class {empty} is empty before balancing (counts {counts:?})"
                )));
            }
            let target = b
                .target_per_class
                .unwrap_or_else(|| counts.iter().copied().max().unwrap_or(0));
            balance_classes(&corpus, target, opts.seed, b.downsample)
        }
    }
}

fn synthetic_candidates(
    spec: &SyntheticSpec,
    binning: &PorosityBinning,
    seed: u64,
) -> Result<Vec<Candidate>> {
    if spec.classes != binning.num_classes() {
        return Err(Error::Config(format!(
            "synthetic spec has {} classes, binning has {}",
            spec.classes,
            binning.num_classes()
        )));
    }
    if spec.per_class == 0 || spec.tile_size == 0 {
        return Err(Error::Config(
            "synthetic corpus needs per_class >= 1 and tile_size >= 1".into(),
        ));
    }
    let jobs: Vec<(usize, usize)> = (0..spec.classes)
        .flat_map(|c| (0..spec.per_class).map(move |i| (c, i)))
        .collect();
    jobs.into_par_iter()
        .map(|(c, i)| {
            let tile_seed = derive_seed(&[seed, c as u64, i as u64]);
            let phi = binning.midpoint(c).clamp(0.0, 1.0);
            let (image, _) = synth_tile(tile_seed, phi, spec.tile_size, spec.blur_radius)?;
            Ok(Candidate {
                id: format!("syn_c{c:02}_{i:05}"),
                source_id: format!(
                    "synthetic:seed={tile_seed:016x},phi={phi},blur={}",
                    spec.blur_radius
                ),
                image,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::pore_pixel_count;

    fn synth_opts(seed: u64) -> BuildOptions {
        BuildOptions {
            seed,
            ..BuildOptions::new(16)
        }
    }

    #[test]
    fn synthetic_corpus_has_requested_cardinality() {
        let spec = SyntheticSpec {
            classes: 10,
            per_class: 3,
            tile_size: 16,
            blur_radius: 1,
        };
        let corpus = build_corpus(&CorpusSource::Synthetic(spec), &synth_opts(4)).unwrap();
        assert_eq!(corpus.tiles.len(), 30);
        assert_eq!(corpus.class_counts(), vec![3; 10]);
        for t in &corpus.tiles {
            let want = pore_pixel_count(corpus.binning.midpoint(t.class_index), 16) as f64 / 256.0;
            assert_eq!(t.porosity.value(), want);
        }
    }

    #[test]
    fn class_mismatch_is_config_error() {
        let spec = SyntheticSpec {
            classes: 5,
            per_class: 1,
            tile_size: 16,
            blur_radius: 1,
        };
        assert!(matches!(
            build_corpus(&CorpusSource::Synthetic(spec), &synth_opts(0)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn image_source_without_balancing() {
        let (img, _) = synth_tile(5, 0.3, 64, 3).unwrap();
        let src = CorpusSource::Images(vec![SourceImage {
            id: "a".into(),
            image: img,
        }]);
        let opts = BuildOptions {
            balance: None,
            ..BuildOptions::new(32)
        };
        let corpus = build_corpus(&src, &opts).unwrap();
        assert_eq!(corpus.tiles.len(), 4);
        assert_eq!(corpus.tiles[1].id, "a_r000_c001");
    }

    #[test]
    fn empty_class_with_balancing_is_data_error() {
        let (img, _) = synth_tile(5, 0.3, 64, 3).unwrap();
        let src = CorpusSource::Images(vec![SourceImage {
            id: "a".into(),
            image: img,
        }]);
        assert!(matches!(
            build_corpus(&src, &BuildOptions::new(32)),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn holdout_fraction_is_seeded() {
        let spec = SyntheticSpec {
            classes: 10,
            per_class: 4,
            tile_size: 16,
            blur_radius: 1,
        };
        let opts = BuildOptions {
            holdout_fraction: 0.25,
            ..synth_opts(9)
        };
        let a = build_corpus(&CorpusSource::Synthetic(spec), &opts).unwrap();
        let b = build_corpus(&CorpusSource::Synthetic(spec), &opts).unwrap();
        let held: Vec<bool> = a.tiles.iter().map(|t| t.holdout).collect();
        assert_eq!(held, b.tiles.iter().map(|t| t.holdout).collect::<Vec<_>>());
        assert!(held.iter().any(|h| *h) && held.iter().any(|h| !*h));
    }
}

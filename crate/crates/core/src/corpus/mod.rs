//! Labeled, class-balanced tile corpora.

mod balance;
mod binning;
mod build;
mod manifest;
mod synth;
mod tiles;

pub use balance::balance_classes;
pub use binning::PorosityBinning;
pub use build::{
    build_corpus, load_source_dir, BalanceOptions, BuildOptions, CorpusSource, SourceImage, SyntheticSpec,
};
pub use manifest::{CorpusManifest, TileRecord, MANIFEST_FILE, MANIFEST_VERSION};
pub use synth::{default_blur_radius, pore_pixel_count, synth_tile};
pub use tiles::{extract_tiles, Augmentation, Dihedral, ImageTile, TileWindow};

#[allow(unused_imports)]
pub(crate) use manifest::hex_digest;

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// In-memory corpus: tiles with pixels, labels and provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub tile_size: usize,
    pub binning: PorosityBinning,
    pub tiles: Vec<ImageTile>,
}

impl Corpus {
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.binning.num_classes()];
        for t in &self.tiles {
            counts[t.class_index] += 1;
        }
        counts
    }

    pub fn manifest(&self) -> CorpusManifest {
        CorpusManifest {
            version: MANIFEST_VERSION,
            tile_size: self.tile_size,
            binning: self.binning.clone(),
            class_counts: self.class_counts(),
            tiles: self.tiles.iter().map(manifest::record_for).collect(),
        }
    }

    /// Write `tiles/<class>/<id>.png` and `manifest.json` under `dir`.
    pub fn write(&self, dir: &Path) -> Result<CorpusManifest> {
        let manifest = self.manifest();
        for k in 0..self.binning.num_classes() {
            let d = dir.join("tiles").join(k.to_string());
            fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        }
        for (tile, rec) in self.tiles.iter().zip(&manifest.tiles) {
            tile.image.save_png(&dir.join(&rec.path))?;
        }
        let path = dir.join(MANIFEST_FILE);
        fs::write(&path, manifest.canonical_json()).map_err(|e| Error::io(&path, e))?;
        Ok(manifest)
    }
}

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::tiles::{Augmentation, Dihedral, ImageTile};
use super::PorosityBinning;
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

/// One line of the corpus manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TileRecord {
    pub id: String,
    /// Relative to the corpus directory.
    pub path: String,
    pub porosity: f64,
    pub class_index: usize,
    /// `original` or the dihedral transform tag.
    pub augmentation: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub augmented_from: Option<String>,
    pub source: String,
    #[serde(default)]
    pub holdout: bool,
}

/// On-disk description of a corpus directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusManifest {
    pub version: u32,
    pub tile_size: usize,
    pub binning: PorosityBinning,
    pub class_counts: Vec<usize>,
    pub tiles: Vec<TileRecord>,
}

impl CorpusManifest {
    pub fn validate(&self) -> Result<()> {
        if self.version != MANIFEST_VERSION {
            return Err(Error::Data(format!(
                "unsupported manifest version {}",
                self.version
            )));
        }
        let binning = self.binning.clone().validated()?;
        let k = binning.num_classes();
        if self.class_counts.len() != k {
            return Err(Error::Data(format!(
                "manifest lists {} class counts for {k} classes",
                self.class_counts.len()
            )));
        }
        let mut counts = vec![0usize; k];
        for t in &self.tiles {
            if t.class_index >= k {
                return Err(Error::Data(format!(
                    "tile {} has class {} >= {k}",
                    t.id, t.class_index
                )));
            }
            if t.augmentation != "original" && Dihedral::from_tag(&t.augmentation).is_none() {
                return Err(Error::Data(format!(
                    "tile {} has unknown augmentation {}",
                    t.id, t.augmentation
                )));
            }
            counts[t.class_index] += 1;
        }
        if counts != self.class_counts {
            return Err(Error::Data(format!(
                "class counts {:?} disagree with tile records {counts:?}",
                self.class_counts
            )));
        }
        Ok(())
    }

    /// Canonical byte encoding; identical corpora give identical bytes.
    pub fn canonical_json(&self) -> Vec<u8> {
        let mut bytes = serde_json::to_vec_pretty(self).expect("manifest serializes");
        bytes.push(b'\n');
        bytes
    }

    /// Hex SHA-256 of the canonical encoding.
    pub fn digest(&self) -> String {
        hex_digest(&self.canonical_json())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: Self =
            serde_json::from_slice(&bytes).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn tile_path(&self, dir: &Path, record: &TileRecord) -> PathBuf {
        dir.join(&record.path)
    }
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub(crate) fn record_for(tile: &ImageTile) -> TileRecord {
    let (augmentation, augmented_from) = match &tile.augmentation {
        Augmentation::Original => ("original".to_string(), None),
        Augmentation::Dihedral { transform, of } => (transform.tag().to_string(), Some(of.clone())),
    };
    TileRecord {
        id: tile.id.clone(),
        path: format!("tiles/{}/{}.png", tile.class_index, tile.id),
        porosity: tile.porosity.value(),
        class_index: tile.class_index,
        augmentation,
        augmented_from,
        source: tile.source_id.clone(),
        holdout: tile.holdout,
    }
}

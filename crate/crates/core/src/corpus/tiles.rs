use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::segmentation::{ColorImage, Porosity};

/// One labeled tile of the corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTile {
    pub id: String,
    pub image: ColorImage,
    pub porosity: Porosity,
    pub class_index: usize,
    /// Provenance: source image name or synthetic recipe.
    pub source_id: String,
    pub augmentation: Augmentation,
    pub holdout: bool,
}

/// How a tile came to be in the corpus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Augmentation {
    Original,
    Dihedral { transform: Dihedral, of: String },
}

/// A square window cut from a larger image.
#[derive(Debug, Clone, PartialEq)]
pub struct TileWindow {
    pub row: usize,
    pub col: usize,
    pub y: usize,
    pub x: usize,
    pub image: ColorImage,
}

/// Cut `tile_size` windows on a top-left anchored grid with the given
/// stride, in row-major order. Partial border windows are dropped.
pub fn extract_tiles(img: &ColorImage, tile_size: usize, stride: usize) -> Result<Vec<TileWindow>> {
    if tile_size == 0 || stride == 0 {
        return Err(Error::Domain("tile size and stride must be positive".into()));
    }
    if tile_size > img.height().min(img.width()) {
        return Err(Error::Domain(format!(
            "image {}x{} smaller than tile size {tile_size}",
            img.height(),
            img.width()
        )));
    }
    let rows = (img.height() - tile_size) / stride + 1;
    let cols = (img.width() - tile_size) / stride + 1;
    let mut out = Vec::with_capacity(rows * cols);
    for row in 0..rows {
        for col in 0..cols {
            let (y, x) = (row * stride, col * stride);
            out.push(TileWindow {
                row,
                col,
                y,
                x,
                image: img.crop(y, x, tile_size),
            });
        }
    }
    Ok(out)
}

/// The eight symmetries of the square: rotations by quarter turns,
/// optionally preceded by a horizontal mirror.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dihedral {
    Identity,
    Rot90,
    Rot180,
    Rot270,
    Flip,
    FlipRot90,
    FlipRot180,
    FlipRot270,
}

impl Dihedral {
    pub const ALL: [Dihedral; 8] = [
        Dihedral::Identity,
        Dihedral::Rot90,
        Dihedral::Rot180,
        Dihedral::Rot270,
        Dihedral::Flip,
        Dihedral::FlipRot90,
        Dihedral::FlipRot180,
        Dihedral::FlipRot270,
    ];

    /// Non-identity elements.
    pub const NONTRIVIAL: [Dihedral; 7] = [
        Dihedral::Rot90,
        Dihedral::Rot180,
        Dihedral::Rot270,
        Dihedral::Flip,
        Dihedral::FlipRot90,
        Dihedral::FlipRot180,
        Dihedral::FlipRot270,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Dihedral::Identity => "identity",
            Dihedral::Rot90 => "rot90",
            Dihedral::Rot180 => "rot180",
            Dihedral::Rot270 => "rot270",
            Dihedral::Flip => "flip",
            Dihedral::FlipRot90 => "flip_rot90",
            Dihedral::FlipRot180 => "flip_rot180",
            Dihedral::FlipRot270 => "flip_rot270",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|d| d.tag() == tag)
    }

    fn parts(self) -> (bool, usize) {
        match self {
            Dihedral::Identity => (false, 0),
            Dihedral::Rot90 => (false, 1),
            Dihedral::Rot180 => (false, 2),
            Dihedral::Rot270 => (false, 3),
            Dihedral::Flip => (true, 0),
            Dihedral::FlipRot90 => (true, 1),
            Dihedral::FlipRot180 => (true, 2),
            Dihedral::FlipRot270 => (true, 3),
        }
    }

    /// Source coordinate feeding destination `(y, x)` in an `n x n` square.
    fn source_of(self, y: usize, x: usize, n: usize) -> (usize, usize) {
        let (flip, quarter_turns) = self.parts();
        // undo the clockwise rotation first, then the mirror
        let (mut sy, mut sx) = (y, x);
        for _ in 0..quarter_turns {
            (sy, sx) = (n - 1 - sx, sy);
        }
        if flip {
            sx = n - 1 - sx;
        }
        (sy, sx)
    }

    pub fn apply(self, img: &ColorImage) -> ColorImage {
        assert_eq!(
            img.height(),
            img.width(),
            "dihedral transforms need a square image"
        );
        let n = img.height();
        let src = img.data();
        let mut data = vec![0.0; src.len()];
        for y in 0..n {
            for x in 0..n {
                let (sy, sx) = self.source_of(y, x, n);
                let d = (y * n + x) * 3;
                let s = (sy * n + sx) * 3;
                data[d..d + 3].copy_from_slice(&src[s..s + 3]);
            }
        }
        ColorImage::from_raw_unchecked(n, n, data)
    }
}

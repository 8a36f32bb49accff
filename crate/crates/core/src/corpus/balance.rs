use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tiles::{Augmentation, Dihedral, ImageTile};
use super::Corpus;
use crate::error::{Error, Result};
use crate::seed::derive_seed;

/// Equalize class sizes to exactly `target_per_class`.
///
/// Short classes grow with dihedral transforms of their own tiles, chosen
/// by a per-class seeded draw. Oversized classes are an error unless
/// `downsample` is set, in which case a seeded subset is kept. Original
/// tiles keep their relative order; new tiles are appended class by class.
pub fn balance_classes(
    corpus: &Corpus,
    target_per_class: usize,
    seed: u64,
    downsample: bool,
) -> Result<Corpus> {
    let k = corpus.binning.num_classes();
    let counts = corpus.class_counts();
    if let Some(empty) = counts.iter().position(|&c| c == 0) {
        return Err(Error::Data(format!("class {empty} has no tiles to balance from")));
    }
    let max = counts.iter().copied().max().unwrap_or(0);
    if target_per_class == 0 || (target_per_class < max && !downsample) {
        return Err(Error::Config(format!(
            "target_per_class {target_per_class} below largest class ({max}) without downsampling"
        )));
    }

    let mut keep = vec![true; corpus.tiles.len()];
    let mut added = Vec::new();
    for class in 0..k {
        let members: Vec<usize> = (0..corpus.tiles.len())
            .filter(|&i| corpus.tiles[i].class_index == class)
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[seed, class as u64]));
        if members.len() > target_per_class {
            let mut shuffled = members.clone();
            shuffled.shuffle(&mut rng);
            for &i in &shuffled[target_per_class..] {
                keep[i] = false;
            }
            continue;
        }
        for j in 0..target_per_class - members.len() {
            let src = &corpus.tiles[members[rng.random_range(0..members.len())]];
            let t = Dihedral::NONTRIVIAL[rng.random_range(0..Dihedral::NONTRIVIAL.len())];
            let (root, total) = match &src.augmentation {
                Augmentation::Original => (src.id.clone(), t),
                Augmentation::Dihedral { transform, of } => (of.clone(), transform.then(t)),
            };
            added.push(ImageTile {
                id: format!("aug_c{class:02}_{j:05}"),
                image: t.apply(&src.image),
                porosity: src.porosity,
                class_index: class,
                source_id: src.source_id.clone(),
                augmentation: Augmentation::Dihedral {
                    transform: total,
                    of: root,
                },
                holdout: src.holdout,
            });
        }
    }

    let tiles = corpus
        .tiles
        .iter()
        .zip(&keep)
        .filter(|(_, &k)| k)
        .map(|(t, _)| t.clone())
        .chain(added)
        .collect();
    Ok(Corpus {
        tile_size: corpus.tile_size,
        binning: corpus.binning.clone(),
        tiles,
    })
}

impl Dihedral {
    /// The element equal to applying `self` and then `next`.
    pub fn then(self, next: Dihedral) -> Dihedral {
        use crate::segmentation::ColorImage;
        // 3x3 probe with distinct pixels identifies the element uniquely
        let probe = ColorImage::new(3, 3, (0..27).map(|i| i as f32 / 26.0).collect()).expect("probe");
        let want = next.apply(&self.apply(&probe));
        Dihedral::ALL
            .into_iter()
            .find(|d| d.apply(&probe) == want)
            .expect("dihedral group is closed")
    }
}

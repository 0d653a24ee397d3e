//! Synthetic scenes, the PPM codec, dataset manifests and augmentation.

mod augment;
mod manifest;
mod ppm;
mod scene;

pub use augment::{augment, AugmentConfig, AugmentParams, Strength};
pub use manifest::{
    load_manifest, parse_manifest, write_manifest, Manifest, ManifestRecord, Split, MANIFEST_HEADER,
};
pub use ppm::{decode_ppm, encode_ppm, from_byte, read_ppm, to_byte, write_ppm, MAX_PPM_SIDE};
pub use scene::{render_scene, SceneSpec, MIN_SCENE_SIZE, NIGHT_CAST, NIGHT_NOISE, NIGHT_SCALE};

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::classes::{Domain, WeatherClass};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MANIFEST_FILE: &str = "manifest.csv";

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

/// SplitMix64 finalizer.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of the `index`-th image: the `index + 1`-th output of a SplitMix64
/// stream started at `master_seed`.
pub fn derive_seed(master_seed: u64, index: u64) -> u64 {
    splitmix64(master_seed.wrapping_add(index.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA)))
}

/// Image counts per (class, domain) for each split, plus the image side.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSpec {
    pub image_size: usize,
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            image_size: 32,
            train: 100,
            val: 20,
            test: 20,
        }
    }
}

impl DatasetSpec {
    /// Splits `per_group` images per (class, domain) by fractions, giving
    /// rounding remainders to train.
    pub fn from_fractions(
        image_size: usize,
        per_group: usize,
        fractions: [f64; 3],
    ) -> Result<Self> {
        let total: f64 = fractions.iter().sum();
        if fractions.iter().any(|f| !(*f >= 0.0)) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::contract(format!(
                "split fractions {fractions:?} must be non-negative and sum to 1"
            )));
        }
        let val = (per_group as f64 * fractions[1]).round() as usize;
        let test = (per_group as f64 * fractions[2]).round() as usize;
        Ok(Self {
            image_size,
            train: per_group.saturating_sub(val + test),
            val,
            test,
        })
    }

    pub fn count(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Val => self.val,
            Split::Test => self.test,
        }
    }

    pub fn total(&self) -> usize {
        (self.train + self.val + self.test) * WeatherClass::ALL.len() * Domain::ALL.len()
    }
}

/// Renders every image, writes `<split>/<class>_<domain>_<k>.ppm` files and
/// `manifest.csv` under `out_dir`, and returns the manifest path.
pub fn generate_dataset(spec: &DatasetSpec, out_dir: &Path, master_seed: u64) -> Result<PathBuf> {
    if spec.image_size < MIN_SCENE_SIZE {
        return Err(Error::contract(format!(
            "image_size {} is below the minimum {MIN_SCENE_SIZE}",
            spec.image_size
        )));
    }
    let mut records = Vec::with_capacity(spec.total());
    let mut index = 0u64;
    for split in Split::ALL {
        let dir = out_dir.join(split.token());
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for class in WeatherClass::ALL {
            for domain in Domain::ALL {
                for k in 0..spec.count(split) {
                    let seed = derive_seed(master_seed, index);
                    index += 1;
                    let rel = format!(
                        "{}/{}_{}_{k:04}.ppm",
                        split.token(),
                        class.token(),
                        domain.token()
                    );
                    let image = render_scene(&SceneSpec {
                        class,
                        domain,
                        seed,
                        size: spec.image_size,
                    })?;
                    write_ppm(&image, &out_dir.join(&rel))?;
                    records.push(ManifestRecord {
                        path: rel,
                        class,
                        domain,
                        split,
                        seed,
                    });
                }
            }
        }
    }
    let path = out_dir.join(MANIFEST_FILE);
    write_manifest(&path, &records)?;
    Ok(path)
}

#[derive(Clone, Debug)]
pub struct LabeledImage {
    pub image: Tensor,
    pub class: WeatherClass,
    pub domain: Domain,
    pub seed: u64,
    pub path: PathBuf,
}

/// Decodes every image of a split, checking it is `[3×size×size]`.
pub fn load_split(manifest: &Manifest, split: Split, size: usize) -> Result<Vec<LabeledImage>> {
    manifest
        .split(split)
        .iter()
        .map(|r| {
            let path = manifest.resolve(r);
            let image = read_ppm(&path)?;
            if image.shape() != [3, size, size] {
                return Err(Error::Data(format!(
                    "{}: decoded {:?}, expected [3, {size}, {size}]",
                    path.display(),
                    image.shape()
                )));
            }
            Ok(LabeledImage {
                image,
                class: r.class,
                domain: r.domain,
                seed: r.seed,
                path,
            })
        })
        .collect()
}

/// Mean pixel value in `[−1, 1]` units.
pub fn mean_brightness(images: &[&Tensor]) -> f64 {
    let n: usize = images.iter().map(|t| t.numel()).sum();
    images
        .iter()
        .map(|t| t.data().iter().sum::<f64>())
        .sum::<f64>()
        / n as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splitmix_reference_values() {
        // first outputs of the reference SplitMix64 generator seeded with 0
        assert_eq!(derive_seed(0, 0), 0xe220_a839_7b1d_cdaf);
        assert_eq!(derive_seed(0, 1), 0x6e78_9e6a_a1b9_65f4);
    }

    #[test]
    fn fractions_split_counts() {
        let s = DatasetSpec::from_fractions(32, 10, [0.6, 0.2, 0.2]).unwrap();
        assert_eq!((s.train, s.val, s.test), (6, 2, 2));
        assert_eq!(s.total(), 60);
        assert!(DatasetSpec::from_fractions(32, 10, [0.5, 0.2, 0.2]).is_err());
    }
}

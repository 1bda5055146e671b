//! Synthetic saliency data, augmentation, resizing and Netpbm file I/O.

mod augment;
mod io;
mod resize;
mod synth;

use std::fs;
use std::path::Path;

pub use augment::{apply as apply_augment, augment, AugmentParams, JITTER_RANGE, MAX_SHIFT, MIN_CROP_AREA};
pub use io::{
    format_manifest, read_image, read_manifest, read_map, read_mask, write_image, write_map, ManifestEntry, Raster,
};
pub use resize::{resize_bilinear, resize_nearest};
pub use synth::{generate, generate_one, DatasetSpec, TextureParams, MAX_AREA, MIN_AREA};

use crate::tensor::Tensor;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    /// `[3, H, W]` in `[0, 1]`.
    pub image: Tensor,
    /// `[H, W]` with entries 0 or 1.
    pub mask: Tensor,
}

impl Sample {
    pub fn validate(&self) -> Result<()> {
        let [3, h, w] = *self.image.shape() else {
            return Err(Error::shape(format!("image {:?} is not [3, H, W]", self.image.shape())));
        };
        if self.mask.shape() != [h, w] {
            return Err(Error::shape(format!(
                "mask {:?} does not match image {:?}",
                self.mask.shape(),
                self.image.shape()
            )));
        }
        if self.mask.data().iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::InvalidGroundtruth(format!("mask of {} is not binary", self.id)));
        }
        Ok(())
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}

/// Deterministic 90/10 assignment by hash of the sample id.
pub fn is_validation(id: &str) -> bool {
    fnv1a(id.as_bytes()).is_multiple_of(10)
}

/// Splits into (train, validation).
pub fn split(samples: Vec<Sample>) -> (Vec<Sample>, Vec<Sample>) {
    samples.into_iter().partition(|s| !is_validation(&s.id))
}

/// Writes `images/<id>.ppm`, `masks/<id>.pgm` and `manifest.tsv` under `dir`.
pub fn write_dataset(dir: &Path, samples: &[Sample]) -> Result<()> {
    for sub in ["images", "masks"] {
        let p = dir.join(sub);
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    let mut rows = Vec::with_capacity(samples.len());
    for s in samples {
        let img = format!("images/{}.ppm", s.id);
        let mask = format!("masks/{}.pgm", s.id);
        write_image(&dir.join(&img), &s.image)?;
        write_map(&dir.join(&mask), &s.mask)?;
        rows.push((s.id.clone(), img, mask));
    }
    let manifest = dir.join("manifest.tsv");
    fs::write(&manifest, format_manifest(&rows)).map_err(|e| Error::io(&manifest, e))
}

/// Loads every sample listed in a manifest.
pub fn load_dataset(manifest: &Path) -> Result<Vec<Sample>> {
    read_manifest(manifest)?
        .into_iter()
        .map(|e| {
            let s = Sample {
                image: read_image(&e.image)?,
                mask: read_mask(&e.mask)?,
                id: e.id,
            };
            s.validate()?;
            Ok(s)
        })
        .collect()
}

/// Accepts either a manifest file or a directory containing `manifest.tsv`.
pub fn resolve_manifest(path: &Path) -> std::path::PathBuf {
    if path.is_dir() {
        path.join("manifest.tsv")
    } else {
        path.to_path_buf()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_ratio_is_roughly_ninety_ten() {
        let val = (0..2000).filter(|i| is_validation(&format!("s{i:06}"))).count();
        assert!((150..250).contains(&val), "{val}");
    }

    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let samples = generate(&DatasetSpec::new(5, 3, 16)).unwrap();
        write_dataset(dir.path(), &samples).unwrap();
        let back = load_dataset(&resolve_manifest(dir.path())).unwrap();
        assert_eq!(back.len(), 3);
        for (a, b) in samples.iter().zip(&back) {
            assert_eq!(a.mask, b.mask);
            assert_eq!(a.id, b.id);
            for (x, y) in a.image.data().iter().zip(b.image.data()) {
                assert!((x - y).abs() <= 0.5 / 255.0 + 1e-12);
            }
        }
    }
}

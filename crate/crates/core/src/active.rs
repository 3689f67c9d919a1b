//! Active-learning bootstrap of the spatial (v2) skin model.
//!
//! A human accepts a set of v1 segmentations; pixels sampled from those masks
//! become labelled training data that carries normalized coordinates.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::raster::{read_pgm, read_ppm, Mask, RgbImage};
use crate::skin::{pixel_features, PixelSample, SkinModel, Variant};

#[derive(Debug, Clone, PartialEq)]
pub struct CuratedEntry {
    pub image: RgbImage,
    pub mask: Mask,
}

impl CuratedEntry {
    pub fn new(image: RgbImage, mask: Mask) -> Result<Self> {
        if image.width != mask.width || image.height != mask.height {
            return Err(Error::InvalidArgument(format!(
                "mask is {}x{} but image is {}x{}",
                mask.width, mask.height, image.width, image.height
            )));
        }
        Ok(Self { image, mask })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CuratedMaskSet {
    pub entries: Vec<CuratedEntry>,
    pub pixels_per_image: usize,
}

impl CuratedMaskSet {
    pub fn new(entries: Vec<CuratedEntry>, pixels_per_image: usize) -> Result<Self> {
        if pixels_per_image == 0 {
            return Err(Error::InvalidArgument("pixels_per_image must be at least 1".into()));
        }
        Ok(Self {
            entries,
            pixels_per_image,
        })
    }

    /// Loads a manifest of `<image.ppm> <mask.pgm>` lines. Relative paths are
    /// resolved against the manifest's directory.
    pub fn from_manifest(path: impl AsRef<Path>, pixels_per_image: usize) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let resolve = |p: &str| -> PathBuf {
            let p = Path::new(p);
            if p.is_absolute() {
                p.to_path_buf()
            } else {
                base.join(p)
            }
        };
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            let [img, mask] = parts[..] else {
                return Err(Error::parse(path, i + 1, "expected `<image.ppm> <mask.pgm>`"));
            };
            let image = read_ppm(resolve(img))?;
            let mask = Mask::from_gray(&read_pgm(resolve(mask))?);
            let entry = CuratedEntry::new(image, mask).map_err(|e| Error::parse(path, i + 1, e.to_string()))?;
            entries.push(entry);
        }
        Self::new(entries, pixels_per_image)
    }

    pub fn total_pixels(&self) -> usize {
        self.entries
            .iter()
            .map(|e| self.pixels_per_image.min(e.image.width * e.image.height))
            .sum()
    }
}

fn image_seed(seed: u64, index: usize) -> u64 {
    // splitmix64 step keeps per-image streams independent of worker layout
    let mut z = seed.wrapping_add((index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Samples `pixels_per_image` distinct pixels per image (all of them when the
/// image is smaller), then keeps `⌊fraction · total⌋` of the pooled samples.
pub fn harvest_pixels(set: &CuratedMaskSet, fraction: f64, seed: u64) -> Result<Vec<PixelSample>> {
    if set.entries.is_empty() {
        return Err(Error::Empty("curated mask set has no entries"));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!("fraction must be in (0, 1], got {fraction}")));
    }
    let per_image: Vec<Vec<PixelSample>> = set
        .entries
        .par_iter()
        .enumerate()
        .map(|(i, entry)| {
            if entry.image.width != entry.mask.width || entry.image.height != entry.mask.height {
                return Err(Error::InvalidArgument(format!("entry {i}: mask and image sizes differ")));
            }
            let (w, h) = (entry.image.width, entry.image.height);
            let n = w * h;
            let k = set.pixels_per_image.min(n);
            let mut rng = ChaCha8Rng::seed_from_u64(image_seed(seed, i));
            let mut picks = index::sample(&mut rng, n, k).into_vec();
            picks.sort_unstable();
            Ok(picks
                .into_iter()
                .map(|p| {
                    let (x, y) = (p % w, p / w);
                    PixelSample::new(
                        pixel_features(entry.image.get(x, y), x, y, w, h, Variant::V2),
                        entry.mask.get(x, y),
                    )
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    let pooled: Vec<PixelSample> = per_image.into_iter().flatten().collect();
    if fraction >= 1.0 {
        return Ok(pooled);
    }
    let keep = (fraction * pooled.len() as f64).floor() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picks = index::sample(&mut rng, pooled.len(), keep).into_vec();
    picks.sort_unstable();
    Ok(picks.into_iter().map(|i| pooled[i].clone()).collect())
}

/// Fits a v2 model on pixels harvested from masks accepted after a v1 pass.
pub fn bootstrap(v1: &SkinModel, set: &CuratedMaskSet, fraction: f64, seed: u64) -> Result<SkinModel> {
    if v1.variant != Variant::V1 {
        return Err(Error::InvalidArgument("bootstrap expects a v1 (colour-only) model".into()));
    }
    SkinModel::fit(&harvest_pixels(set, fraction, seed)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_pixel_set() -> CuratedMaskSet {
        let img = RgbImage::filled(1, 1, [10, 20, 30]);
        let mask = Mask::new(1, 1, vec![true]).unwrap();
        CuratedMaskSet::new(vec![CuratedEntry::new(img, mask).unwrap()], 1).unwrap()
    }

    #[test]
    fn single_pixel_harvest() {
        let s = harvest_pixels(&one_pixel_set(), 1.0, 3).unwrap();
        assert_eq!(s, vec![PixelSample::new(vec![30.0, 20.0, 10.0, 0.0, 0.0], true)]);
    }

    #[test]
    fn size_mismatch_rejected() {
        let img = RgbImage::filled(2, 2, [0, 0, 0]);
        assert!(CuratedEntry::new(img.clone(), Mask::empty(2, 3)).is_err());
        let bad = CuratedMaskSet {
            entries: vec![CuratedEntry {
                image: img,
                mask: Mask::empty(3, 2),
            }],
            pixels_per_image: 2,
        };
        assert!(harvest_pixels(&bad, 1.0, 0).is_err());
    }

    #[test]
    fn fraction_bounds() {
        assert!(harvest_pixels(&one_pixel_set(), 0.0, 0).is_err());
        assert!(harvest_pixels(&one_pixel_set(), 1.5, 0).is_err());
    }

    #[test]
    fn all_skin_masks_cannot_fit() {
        let img = RgbImage::filled(8, 8, [200, 120, 90]);
        let mask = Mask::new(8, 8, vec![true; 64]).unwrap();
        let set = CuratedMaskSet::new(vec![CuratedEntry::new(img, mask).unwrap()], 20).unwrap();
        let v1 = {
            let mut s: Vec<PixelSample> = (0..8).map(|i| PixelSample::new(vec![i as f64, 1.0, (i * i) as f64], true)).collect();
            s.extend((0..8).map(|i| PixelSample::new(vec![100.0 + i as f64, (i * 3 % 5) as f64, 2.0 * i as f64], false)));
            SkinModel::fit(&s).unwrap()
        };
        assert!(matches!(
            bootstrap(&v1, &set, 1.0, 1),
            Err(Error::InsufficientData { class: "non-skin", .. })
        ));
    }
}

mod common;

use fusionkit::active::{bootstrap, harvest_pixels, CuratedEntry, CuratedMaskSet};
use fusionkit::raster::{Mask, RgbImage};
use fusionkit::skin::{pixel_features, PixelSample, SkinModel, Variant};
use fusionkit::Error;
use rand::Rng;

/// Images whose left half is skin-toned and marked skin in the mask.
fn left_half_set(rng: &mut impl Rng, n_images: usize, ppi: usize) -> CuratedMaskSet {
    let (w, h) = (40, 30);
    let entries = (0..n_images)
        .map(|_| {
            let mut img = RgbImage::filled(w, h, [0, 0, 0]);
            let mut mask = Mask::empty(w, h);
            for y in 0..h {
                for x in 0..w {
                    let skin = x < w / 2;
                    let rgb = if skin {
                        [rng.gen_range(180..240), rng.gen_range(110..160), rng.gen_range(90..130)]
                    } else {
                        [rng.gen_range(0..=255), rng.gen_range(0..=255), rng.gen_range(0..=255)]
                    };
                    img.set(x, y, rgb);
                    mask.set(x, y, skin);
                }
            }
            CuratedEntry::new(img, mask).unwrap()
        })
        .collect();
    CuratedMaskSet::new(entries, ppi).unwrap()
}

fn v1_model() -> SkinModel {
    let mut rng = common::rng(0);
    let samples: Vec<PixelSample> = (0..200)
        .map(|i| {
            let f = (0..3).map(|_| rng.gen_range(0.0..255.0)).collect();
            PixelSample::new(f, i % 2 == 0)
        })
        .collect();
    SkinModel::fit(&samples).unwrap()
}

#[test]
fn harvest_is_deterministic_and_labels_follow_mask() {
    let mut rng = common::rng(1);
    let set = left_half_set(&mut rng, 6, 100);
    let a = harvest_pixels(&set, 0.5, 42).unwrap();
    assert_eq!(a, harvest_pixels(&set, 0.5, 42).unwrap());
    assert_eq!(a.len(), 300);
    assert_ne!(a, harvest_pixels(&set, 0.5, 43).unwrap());
    for s in &a {
        // x_norm < 0.5 exactly on the skin half (x <= 19 of 0..=39)
        assert_eq!(s.skin, s.features[3] < 0.5, "{s:?}");
    }
}

#[test]
fn harvest_features_match_sampled_pixel() {
    let mut rng = common::rng(2);
    let set = left_half_set(&mut rng, 2, 30);
    let entry = &set.entries[0];
    let all = harvest_pixels(&set, 1.0, 7).unwrap();
    assert_eq!(all.len(), 60);
    for s in &all[..30] {
        let x = (s.features[3] * 39.0).round() as usize;
        let y = (s.features[4] * 29.0).round() as usize;
        assert_eq!(s.features, pixel_features(entry.image.get(x, y), x, y, 40, 30, Variant::V2));
        assert_eq!(s.skin, entry.mask.get(x, y));
    }
}

#[test]
fn single_pixel_image() {
    let img = RgbImage::filled(1, 1, [1, 2, 3]);
    let mut mask = Mask::empty(1, 1);
    mask.set(0, 0, true);
    let set = CuratedMaskSet::new(vec![CuratedEntry::new(img, mask).unwrap()], 1).unwrap();
    let s = harvest_pixels(&set, 1.0, 0).unwrap();
    assert_eq!(s, vec![PixelSample::new(vec![3.0, 2.0, 1.0, 0.0, 0.0], true)]);
}

#[test]
fn all_skin_masks_lack_non_skin_samples() {
    let img = RgbImage::filled(4, 4, [200, 150, 120]);
    let mask = Mask::new(4, 4, vec![true; 16]).unwrap();
    let set = CuratedMaskSet::new(vec![CuratedEntry::new(img, mask).unwrap()], 16).unwrap();
    let err = bootstrap(&v1_model(), &set, 1.0, 0).unwrap_err();
    assert!(matches!(err, Error::InsufficientData { class: "non-skin", .. }));
}

#[test]
fn bootstrap_learns_left_half_position() {
    let mut rng = common::rng(3);
    let set = left_half_set(&mut rng, 20, 100);
    let samples = harvest_pixels(&set, 1.0, 5).unwrap();
    let class_mean_x = |skin: bool| {
        let xs: Vec<f64> = samples.iter().filter(|s| s.skin == skin).map(|s| s.features[3]).collect();
        xs.iter().sum::<f64>() / xs.len() as f64
    };
    let model = bootstrap(&v1_model(), &set, 1.0, 5).unwrap();
    assert_eq!(model.variant, Variant::V2);
    assert!((model.skin.mean()[3] - class_mean_x(true)).abs() < 1e-12);
    assert!((model.non_skin.mean()[3] - class_mean_x(false)).abs() < 1e-12);
    assert!(model.skin.mean()[3] < model.non_skin.mean()[3]);
}

#[test]
fn half_and_full_fraction_agree_far_from_boundary() {
    let mut rng = common::rng(4);
    let set = left_half_set(&mut rng, 20, 100);
    let full = bootstrap(&v1_model(), &set, 1.0, 9).unwrap();
    let half = bootstrap(&v1_model(), &set, 0.5, 9).unwrap();
    assert_ne!(full, half);
    let probe = full.skin.mean().to_vec();
    assert!(full.classify(&probe).unwrap());
    assert!(half.classify(&probe).unwrap());
}

#[test]
fn bootstrap_rejects_v2_seed_model() {
    let mut rng = common::rng(5);
    let set = left_half_set(&mut rng, 2, 50);
    let v2 = bootstrap(&v1_model(), &set, 1.0, 0).unwrap();
    assert!(bootstrap(&v2, &set, 1.0, 0).is_err());
}

#[test]
fn manifest_paths_resolve_relative_to_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = common::rng(6);
    let set = left_half_set(&mut rng, 2, 10);
    let mut manifest = String::new();
    for (i, e) in set.entries.iter().enumerate() {
        fusionkit::raster::write_ppm(dir.path().join(format!("i{i}.ppm")), &e.image).unwrap();
        fusionkit::raster::write_pgm(dir.path().join(format!("m{i}.pgm")), &e.mask.to_gray()).unwrap();
        manifest.push_str(&format!("i{i}.ppm m{i}.pgm\n"));
    }
    std::fs::write(dir.path().join("list.txt"), manifest).unwrap();
    let loaded = CuratedMaskSet::from_manifest(dir.path().join("list.txt"), 10).unwrap();
    assert_eq!(loaded, set);
}

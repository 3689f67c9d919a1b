//! Gaussian Naive Bayes skin classifier.
//!
//! Each class likelihood is a full-covariance multivariate normal fitted to
//! labelled pixels. Priors are fixed at one half, so the posterior reduces to
//! the normalized likelihood ratio `L_skin / (L_skin + L_non_skin)`. All
//! densities are evaluated in log-space.
//!
//! Feature layout is `[blue, green, red]` for [`Variant::V1`] and
//! `[blue, green, red, x_norm, y_norm]` for [`Variant::V2`], with coordinates
//! normalized to `[0, 1]`.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{trace, Cholesky};
use crate::raster::{GrayImage, Mask, RgbImage};

/// Relative ridge added to every fitted covariance: `ε = REG_SCALE · tr(Σ)/d`.
pub const REG_SCALE: f64 = 1e-6;

const MODEL_MAGIC: &str = "fusionkit-skin-model";
const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// colour only
    V1,
    /// colour plus normalized pixel coordinates
    V2,
}

impl Variant {
    pub fn dim(self) -> usize {
        match self {
            Variant::V1 => 3,
            Variant::V2 => 5,
        }
    }

    pub fn from_dim(dim: usize) -> Result<Self> {
        match dim {
            3 => Ok(Variant::V1),
            5 => Ok(Variant::V2),
            other => Err(Error::InvalidArgument(format!(
                "feature dimension must be 3 (v1) or 5 (v2), got {other}"
            ))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::V1 => "v1",
            Variant::V2 => "v2",
        }
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "v1" => Ok(Variant::V1),
            "v2" => Ok(Variant::V2),
            other => Err(Error::InvalidArgument(format!("unknown skin variant `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PixelSample {
    pub features: Vec<f64>,
    pub skin: bool,
}

impl PixelSample {
    pub fn new(features: Vec<f64>, skin: bool) -> Self {
        Self { features, skin }
    }
}

/// Builds the feature vector of pixel `(x, y)` for the given variant.
pub fn pixel_features(rgb: [u8; 3], x: usize, y: usize, width: usize, height: usize, variant: Variant) -> Vec<f64> {
    let [r, g, b] = rgb;
    let mut f = vec![b as f64, g as f64, r as f64];
    if variant == Variant::V2 {
        f.push(normalize_coord(x, width));
        f.push(normalize_coord(y, height));
    }
    f
}

/// Maps `0..extent` onto `[0, 1]` by dividing by `extent - 1`.
pub fn normalize_coord(pos: usize, extent: usize) -> f64 {
    if extent <= 1 {
        0.0
    } else {
        pos as f64 / (extent - 1) as f64
    }
}

/// One class likelihood `N(mean, covariance)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianClassConditional {
    mean: Vec<f64>,
    covariance: Vec<f64>,
    chol: Cholesky,
}

impl GaussianClassConditional {
    /// Takes a covariance that is already regularized; fails if it is not
    /// symmetric positive definite.
    pub fn new(mean: Vec<f64>, covariance: Vec<f64>) -> Result<Self> {
        let d = mean.len();
        if covariance.len() != d * d {
            return Err(Error::DimensionMismatch {
                expected: d * d,
                got: covariance.len(),
            });
        }
        for i in 0..d {
            for j in 0..i {
                let (a, b) = (covariance[i * d + j], covariance[j * d + i]);
                if (a - b).abs() > 1e-12 * a.abs().max(b.abs()).max(1.0) {
                    return Err(Error::InvalidArgument("covariance is not symmetric".into()));
                }
            }
        }
        let chol = Cholesky::new(&covariance, d)?;
        Ok(Self {
            mean,
            covariance,
            chol,
        })
    }

    /// Sample mean plus unbiased covariance with an `εI` ridge.
    pub fn estimate<'a, I>(rows: I, dim: usize) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [f64]> + Clone,
    {
        let mut n = 0usize;
        let mut mean = vec![0.0; dim];
        for row in rows.clone() {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
            n += 1;
        }
        if n < 2 {
            return Err(Error::Empty("need at least two samples for a covariance"));
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);

        let mut cov = vec![0.0; dim * dim];
        for row in rows {
            for i in 0..dim {
                let di = row[i] - mean[i];
                for j in 0..=i {
                    cov[i * dim + j] += di * (row[j] - mean[j]);
                }
            }
        }
        let denom = (n - 1) as f64;
        for i in 0..dim {
            for j in 0..=i {
                let v = cov[i * dim + j] / denom;
                cov[i * dim + j] = v;
                cov[j * dim + i] = v;
            }
        }
        let tr = trace(&cov, dim);
        // a constant class has zero trace; fall back to an absolute ridge
        let eps = if tr > 0.0 { REG_SCALE * tr / dim as f64 } else { REG_SCALE };
        for i in 0..dim {
            cov[i * dim + i] += eps;
        }
        Self::new(mean, cov)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Row-major `d × d`.
    pub fn covariance(&self) -> &[f64] {
        &self.covariance
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        let d = self.dim();
        let diff: Vec<f64> = x.iter().zip(&self.mean).map(|(a, b)| a - b).collect();
        let maha = self.chol.mahalanobis_sq(&diff);
        -0.5 * (d as f64 * (2.0 * PI).ln() + self.chol.log_det() + maha)
    }
}

/// Posterior value plus a flag raised when neither likelihood is representable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Posterior {
    pub value: f64,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkinModel {
    pub skin: GaussianClassConditional,
    pub non_skin: GaussianClassConditional,
    pub variant: Variant,
}

impl SkinModel {
    pub fn new(skin: GaussianClassConditional, non_skin: GaussianClassConditional, variant: Variant) -> Result<Self> {
        for g in [&skin, &non_skin] {
            if g.dim() != variant.dim() {
                return Err(Error::DimensionMismatch {
                    expected: variant.dim(),
                    got: g.dim(),
                });
            }
        }
        Ok(Self {
            skin,
            non_skin,
            variant,
        })
    }

    pub fn fit(samples: &[PixelSample]) -> Result<Self> {
        let first = samples.first().ok_or(Error::Empty("no training samples"))?;
        let dim = first.features.len();
        let variant = Variant::from_dim(dim)?;
        let mut counts = [0usize; 2];
        for s in samples {
            if s.features.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: s.features.len(),
                });
            }
            counts[s.skin as usize] += 1;
        }
        for (count, class) in [(counts[1], "skin"), (counts[0], "non-skin")] {
            if count < dim + 1 {
                return Err(Error::InsufficientData {
                    class,
                    needed: dim + 1,
                    got: count,
                });
            }
        }
        let rows = |skin: bool| {
            samples
                .iter()
                .filter(move |s| s.skin == skin)
                .map(|s| s.features.as_slice())
        };
        let skin = GaussianClassConditional::estimate(rows(true), dim)?;
        let non_skin = GaussianClassConditional::estimate(rows(false), dim)?;
        Self::new(skin, non_skin, variant)
    }

    pub fn dim(&self) -> usize {
        self.variant.dim()
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn posterior_detailed(&self, x: &[f64]) -> Result<Posterior> {
        self.check_dim(x)?;
        let ls = self.skin.log_density(x);
        let ln = self.non_skin.log_density(x);
        if !(ls > f64::NEG_INFINITY) && !(ln > f64::NEG_INFINITY) {
            return Ok(Posterior {
                value: 0.5,
                degenerate: true,
            });
        }
        // logistic of the log-likelihood ratio
        let value = 1.0 / (1.0 + (ln - ls).exp());
        Ok(Posterior {
            value,
            degenerate: false,
        })
    }

    pub fn posterior(&self, x: &[f64]) -> Result<f64> {
        Ok(self.posterior_detailed(x)?.value)
    }

    /// Skin iff the posterior is strictly above one half.
    pub fn classify(&self, x: &[f64]) -> Result<bool> {
        Ok(self.posterior(x)? > 0.5)
    }

    pub fn segment(&self, image: &RgbImage) -> Result<Segmentation> {
        let (w, h) = (image.width, image.height);
        if w == 0 || h == 0 {
            return Err(Error::Empty("image has zero width or height"));
        }
        let probs: Vec<f64> = (0..h)
            .into_par_iter()
            .flat_map_iter(|y| {
                (0..w).map(move |x| {
                    let f = pixel_features(image.get(x, y), x, y, w, h, self.variant);
                    self.posterior(&f).expect("feature dimension matches variant")
                })
            })
            .collect();
        let mask = Mask {
            width: w,
            height: h,
            bits: probs.iter().map(|&p| p > 0.5).collect(),
        };
        Ok(Segmentation {
            heatmap: Heatmap {
                width: w,
                height: h,
                values: probs,
            },
            mask,
        })
    }

    /// Same model with the two class likelihoods exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            skin: self.non_skin.clone(),
            non_skin: self.skin.clone(),
            variant: self.variant,
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{MODEL_MAGIC} {MODEL_VERSION}");
        let _ = writeln!(out, "variant {}", self.variant.as_str());
        let _ = writeln!(out, "dim {}", self.dim());
        for (tag, g) in [("skin", &self.skin), ("non_skin", &self.non_skin)] {
            let _ = writeln!(out, "{tag}_mean {}", join(g.mean()));
            let _ = writeln!(out, "{tag}_cov {}", join(g.covariance()));
        }
        out
    }

    pub fn from_text(text: &str, path: &Path) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let mut next = |key: &str| -> Result<(usize, Vec<String>)> {
            let (i, line) = lines
                .next()
                .ok_or_else(|| Error::parse(path, 0, format!("missing `{key}` line")))?;
            let mut parts = line.split_whitespace();
            let head = parts.next().unwrap_or_default();
            if head != key {
                return Err(Error::parse(path, i + 1, format!("expected `{key}`, found `{head}`")));
            }
            Ok((i + 1, parts.map(str::to_string).collect()))
        };
        let (ln, version) = next(MODEL_MAGIC)?;
        if version.first().map(String::as_str) != Some("1") {
            return Err(Error::parse(path, ln, "unsupported model version"));
        }
        let (ln, variant) = next("variant")?;
        let variant: Variant = variant
            .first()
            .ok_or_else(|| Error::parse(path, ln, "missing variant"))?
            .parse()
            .map_err(|e: Error| Error::parse(path, ln, e.to_string()))?;
        let (ln, dim) = next("dim")?;
        let dim: usize = dim
            .first()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::parse(path, ln, "bad dim"))?;
        if dim != variant.dim() {
            return Err(Error::parse(path, ln, "dim does not match variant"));
        }
        let mut read_vec = |key: &str, len: usize| -> Result<Vec<f64>> {
            let (ln, vals) = next(key)?;
            let parsed: Vec<f64> = vals
                .iter()
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::parse(path, ln, e.to_string()))?;
            if parsed.len() != len {
                return Err(Error::parse(path, ln, format!("expected {len} values, got {}", parsed.len())));
            }
            Ok(parsed)
        };
        let sm = read_vec("skin_mean", dim)?;
        let sc = read_vec("skin_cov", dim * dim)?;
        let nm = read_vec("non_skin_mean", dim)?;
        let nc = read_vec("non_skin_cov", dim * dim)?;
        Self::new(
            GaussianClassConditional::new(sm, sc)?,
            GaussianClassConditional::new(nm, nc)?,
            variant,
        )
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text, path)
    }
}

fn join(values: &[f64]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ")
}

/// Per-pixel skin posterior, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl Heatmap {
    /// `round(255 · p)` per pixel.
    pub fn to_gray(&self) -> GrayImage {
        GrayImage {
            width: self.width,
            height: self.height,
            pixels: self
                .values
                .iter()
                .map(|p| (255.0 * p.clamp(0.0, 1.0)).round() as u8)
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segmentation {
    pub heatmap: Heatmap,
    pub mask: Mask,
}

/// Reads labelled pixels in the UCI skin-segmentation layout: whitespace
/// separated integers `B G R label`, label 1 = skin and 2 = non-skin. Rows
/// with five features (`B G R x_norm y_norm label`) produce v2 samples.
pub fn load_pixel_file(path: impl AsRef<Path>) -> Result<Vec<PixelSample>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_pixel_text(&text, path)
}

pub fn parse_pixel_text(text: &str, path: &Path) -> Result<Vec<PixelSample>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 4 && fields.len() != 6 {
            return Err(Error::parse(path, i + 1, format!("expected 4 or 6 columns, got {}", fields.len())));
        }
        let (label, feats) = fields.split_last().expect("non-empty");
        let features = feats
            .iter()
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::parse(path, i + 1, e.to_string()))?;
        if features[..3].iter().any(|c| !(0.0..=255.0).contains(c)) {
            return Err(Error::parse(path, i + 1, "colour component outside [0, 255]"));
        }
        if features[3..].iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::parse(path, i + 1, "normalized coordinate outside [0, 1]"));
        }
        let skin = match *label {
            "1" => true,
            "2" => false,
            other => return Err(Error::parse(path, i + 1, format!("label must be 1 or 2, got `{other}`"))),
        };
        out.push(PixelSample { features, skin });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn iso(mean: Vec<f64>, var: f64) -> GaussianClassConditional {
        let d = mean.len();
        let mut cov = vec![0.0; d * d];
        for i in 0..d {
            cov[i * d + i] = var;
        }
        GaussianClassConditional::new(mean, cov).unwrap()
    }

    fn simplex_samples(offset: f64, skin: bool) -> Vec<PixelSample> {
        [[0.0, 0.0, 0.0], [2.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 2.0]]
            .iter()
            .map(|p| PixelSample::new(p.iter().map(|v| v + offset).collect(), skin))
            .collect()
    }

    #[test]
    fn fit_means_of_small_sets() {
        let mut samples = simplex_samples(0.0, true);
        samples.extend(simplex_samples(10.0, false));
        let m = SkinModel::fit(&samples).unwrap();
        assert_eq!(m.variant, Variant::V1);
        for v in m.skin.mean() {
            assert!((v - 0.5).abs() < 1e-15);
        }
        for v in m.non_skin.mean() {
            assert!((v - 10.5).abs() < 1e-15);
        }
    }

    #[test]
    fn fit_rejects_too_few_samples() {
        let mut samples = simplex_samples(0.0, true);
        samples.extend(simplex_samples(10.0, false));
        samples.pop();
        assert!(matches!(
            SkinModel::fit(&samples),
            Err(Error::InsufficientData { class: "non-skin", .. })
        ));
    }

    #[test]
    fn fit_rejects_mixed_dimensions() {
        let mut samples = simplex_samples(0.0, true);
        samples.extend(simplex_samples(10.0, false));
        samples.push(PixelSample::new(vec![1.0; 5], true));
        assert!(matches!(SkinModel::fit(&samples), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn constant_class_still_fits() {
        let mut samples: Vec<_> = (0..5).map(|_| PixelSample::new(vec![255.0; 3], true)).collect();
        samples.extend(simplex_samples(10.0, false));
        let m = SkinModel::fit(&samples).unwrap();
        assert!(m.classify(&[255.0, 255.0, 255.0]).unwrap());
    }

    #[test]
    fn identical_classes_give_half() {
        let g = iso(vec![100.0, 50.0, 20.0], 30.0);
        let m = SkinModel::new(g.clone(), g, Variant::V1).unwrap();
        for x in [[0.0, 0.0, 0.0], [100.0, 50.0, 20.0], [255.0, 3.0, 77.0]] {
            assert_eq!(m.posterior(&x).unwrap(), 0.5);
            assert!(!m.classify(&x).unwrap());
        }
    }

    #[test]
    fn separated_classes_at_skin_mean() {
        let m = SkinModel::new(iso(vec![0.0; 3], 1.0), iso(vec![20.0, 0.0, 0.0], 1.0), Variant::V1).unwrap();
        let p = m.posterior(&[0.0; 3]).unwrap();
        assert!((p - 1.0).abs() < 1e-9);
        assert!(m.classify(&[0.0; 3]).unwrap());
    }

    #[test]
    fn far_point_flags_degenerate() {
        let m = SkinModel::new(iso(vec![0.0; 3], 1.0), iso(vec![1.0; 3], 1.0), Variant::V1).unwrap();
        let p = m.posterior_detailed(&[f64::INFINITY, 0.0, 0.0]).unwrap();
        assert_eq!(p.value, 0.5);
        assert!(p.degenerate);
    }

    #[test]
    fn dimension_mismatch_errors() {
        let m = SkinModel::new(iso(vec![0.0; 3], 1.0), iso(vec![1.0; 3], 1.0), Variant::V1).unwrap();
        assert!(m.posterior(&[0.0; 5]).is_err());
    }

    #[test]
    fn segment_single_pixel_at_skin_mean() {
        // feature order is B, G, R
        let m = SkinModel::new(iso(vec![30.0, 60.0, 200.0], 4.0), iso(vec![200.0, 200.0, 200.0], 4.0), Variant::V1).unwrap();
        let img = RgbImage::filled(1, 1, [200, 60, 30]);
        let seg = m.segment(&img).unwrap();
        assert!(seg.mask.bits[0]);
    }

    #[test]
    fn segment_uniform_identical_model() {
        let g = iso(vec![1.0, 2.0, 3.0], 9.0);
        let m = SkinModel::new(g.clone(), g, Variant::V1).unwrap();
        let seg = m.segment(&RgbImage::filled(3, 2, [9, 9, 9])).unwrap();
        assert!(seg.heatmap.values.iter().all(|&p| p == 0.5));
        assert_eq!(seg.mask.count(), 0);
        assert!(seg.heatmap.to_gray().pixels.iter().all(|&v| v == 128));
    }

    #[test]
    fn segment_rejects_empty_image() {
        let g = iso(vec![0.0; 3], 1.0);
        let m = SkinModel::new(g.clone(), g, Variant::V1).unwrap();
        assert!(m.segment(&RgbImage::filled(0, 4, [0, 0, 0])).is_err());
    }

    #[test]
    fn model_text_roundtrip() {
        let mut samples = simplex_samples(0.0, true);
        samples.extend(simplex_samples(10.0, false));
        let m = SkinModel::fit(&samples).unwrap();
        let back = SkinModel::from_text(&m.to_text(), Path::new("mem")).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn pixel_file_parsing() {
        let text = "74\t85\t123\t1\n0 0 0 2\n";
        let s = parse_pixel_text(text, Path::new("mem")).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].features, vec![74.0, 85.0, 123.0]);
        assert!(s[0].skin && !s[1].skin);
        assert!(parse_pixel_text("1 2 3 4\n", Path::new("mem")).is_err());
        assert!(parse_pixel_text("1 2 300 1\n", Path::new("mem")).is_err());
    }
}

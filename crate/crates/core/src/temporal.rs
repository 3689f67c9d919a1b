//! Temporal smoothing of fused per-frame decisions.
//!
//! The smoothed decision at frame `t` is the mean of the fused distributions
//! over the preceding `M` seconds of the same session, frame `t` included.
//! With frames arriving at `fps`, the window holds `⌊M · fps⌋ + 1` frames,
//! truncated at the start of the session.

use std::collections::HashMap;

use rayon::prelude::*;

use crate::ensemble::{accuracy, ClassDistribution, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::linalg::Cholesky;
use crate::records::PredictionRecord;

pub const DEFAULT_FPS: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothingConfig {
    /// History length `M` in seconds.
    pub window_s: f64,
    pub fps: f64,
}

impl SmoothingConfig {
    pub fn new(window_s: f64, fps: f64) -> Result<Self> {
        if !(fps > 0.0) || !fps.is_finite() {
            return Err(Error::InvalidArgument(format!("fps must be positive, got {fps}")));
        }
        if !(window_s >= 0.0) || !window_s.is_finite() {
            return Err(Error::InvalidArgument(format!("window must be non-negative, got {window_s}")));
        }
        Ok(Self { window_s, fps })
    }

    /// Frames in a full window, current frame included.
    pub fn window_frames(&self) -> usize {
        // the epsilon absorbs products like 0.7 * 30 = 20.999999999999996
        (self.window_s * self.fps + 1e-9).floor() as usize + 1
    }
}

/// Record positions grouped by session, in input order. Fails if timestamps
/// decrease inside a session.
fn sessions(records: &[PredictionRecord]) -> Result<Vec<Vec<usize>>> {
    let mut index: HashMap<&str, usize> = HashMap::new();
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for (i, r) in records.iter().enumerate() {
        let g = *index.entry(r.session_id.as_str()).or_insert_with(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        if let Some(&prev) = groups[g].last() {
            if records[prev].timestamp_s > r.timestamp_s {
                return Err(Error::UnsortedTimestamps {
                    session: r.session_id.clone(),
                    index: i,
                });
            }
        }
        groups[g].push(i);
    }
    Ok(groups)
}

pub fn smooth(
    records: &[PredictionRecord],
    fused: &[ClassDistribution],
    cfg: &SmoothingConfig,
) -> Result<Vec<ClassDistribution>> {
    if records.len() != fused.len() {
        return Err(Error::LengthMismatch {
            left: records.len(),
            right: fused.len(),
        });
    }
    let groups = sessions(records)?;
    let frames = cfg.window_frames();
    let mut out = vec![ClassDistribution::uniform(); records.len()];
    let per_session: Vec<Vec<(usize, ClassDistribution)>> = groups
        .par_iter()
        .map(|members| {
            (0..members.len())
                .map(|k| {
                    let start = (k + 1).saturating_sub(frames);
                    let window = &members[start..=k];
                    let mut acc = [0.0; NUM_CLASSES];
                    for &j in window {
                        for (a, p) in acc.iter_mut().zip(fused[j].probs()) {
                            *a += p;
                        }
                    }
                    let n = window.len() as f64;
                    (members[k], ClassDistribution::from_raw(acc.map(|a| a / n)))
                })
                .collect()
        })
        .collect();
    for (i, d) in per_session.into_iter().flatten() {
        out[i] = d;
    }
    Ok(out)
}

/// Accuracy of the smoothed decision for every window length in `grid`.
pub fn sweep(
    records: &[PredictionRecord],
    fused: &[ClassDistribution],
    grid: &[f64],
    fps: f64,
) -> Result<Vec<(f64, f64)>> {
    if grid.is_empty() {
        return Err(Error::Empty("window grid"));
    }
    let truths: Vec<usize> = records.iter().map(|r| r.true_class).collect();
    grid.iter()
        .map(|&m| {
            let smoothed = smooth(records, fused, &SmoothingConfig::new(m, fps)?)?;
            Ok((m, accuracy(&smoothed, &truths)?))
        })
        .collect()
}

/// Parses `start:step:end` (inclusive of `end` up to rounding).
pub fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let bad = || Error::InvalidArgument(format!("grid must be start:step:end, got `{spec}`"));
    let parts: Vec<f64> = spec
        .split(':')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| bad())?;
    let [start, step, end] = parts[..] else {
        return Err(bad());
    };
    if !(step > 0.0) || end < start || start < 0.0 {
        return Err(bad());
    }
    let n = ((end - start) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|i| start + i as f64 * step).collect())
}

/// `amplitude · exp(-(m - mean)² / (2 sigma²)) + offset`
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianFit {
    pub amplitude: f64,
    pub mean: f64,
    pub sigma: f64,
    pub offset: f64,
}

impl GaussianFit {
    pub fn evaluate(&self, m: f64) -> f64 {
        let z = (m - self.mean) / self.sigma;
        self.amplitude * (-0.5 * z * z).exp() + self.offset
    }

    pub fn residual_sum_squares(&self, points: &[(f64, f64)]) -> f64 {
        points.iter().map(|&(m, a)| (self.evaluate(m) - a).powi(2)).sum()
    }
}

/// Least-squares amplitude and offset for a fixed bell shape. `None` when the
/// shape is numerically constant over the points.
fn linear_part(points: &[(f64, f64)], mean: f64, sigma: f64) -> Option<(f64, f64, f64)> {
    let n = points.len() as f64;
    let (mut sg, mut sgg, mut sy, mut sgy) = (0.0, 0.0, 0.0, 0.0);
    for &(m, y) in points {
        let z = (m - mean) / sigma;
        let g = (-0.5 * z * z).exp();
        sg += g;
        sgg += g * g;
        sy += y;
        sgy += g * y;
    }
    let det = n * sgg - sg * sg;
    if det <= 1e-12 * n * sgg.max(f64::MIN_POSITIVE) {
        return None;
    }
    let a = (n * sgy - sg * sy) / det;
    let c = (sy - a * sg) / n;
    let fit = GaussianFit {
        amplitude: a,
        mean,
        sigma,
        offset: c,
    };
    Some((a, c, fit.residual_sum_squares(points)))
}

/// Fits `a · exp(-(m-μ)²/(2σ²)) + c`: a coarse grid over `(μ, σ)` with the
/// linear parameters solved in closed form, then Levenberg-Marquardt on all
/// four parameters.
pub fn fit_gaussian(points: &[(f64, f64)]) -> Result<GaussianFit> {
    if points.len() < 4 {
        return Err(Error::InvalidArgument(format!("need at least 4 points, got {}", points.len())));
    }
    if points.iter().any(|(m, a)| !m.is_finite() || !a.is_finite()) {
        return Err(Error::InvalidArgument("points must be finite".into()));
    }
    let first = points[0].1;
    let scale = points.iter().map(|p| p.1.abs()).fold(0.0, f64::max).max(1.0);
    if points.iter().all(|p| (p.1 - first).abs() <= 1e-12 * scale) {
        return Err(Error::FlatCurve);
    }
    let lo = points.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let hi = points.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    if !(span > 0.0) {
        return Err(Error::InvalidArgument("points need distinct abscissae".into()));
    }

    const MEAN_STEPS: usize = 200;
    const SIGMA_STEPS: usize = 80;
    let (s_lo, s_hi) = (span / 200.0, span * 2.0);
    let mut best: Option<(f64, GaussianFit)> = None;
    for i in 0..=MEAN_STEPS {
        let mean = lo + span * i as f64 / MEAN_STEPS as f64;
        for j in 0..=SIGMA_STEPS {
            let sigma = s_lo * (s_hi / s_lo).powf(j as f64 / SIGMA_STEPS as f64);
            if let Some((a, c, rss)) = linear_part(points, mean, sigma) {
                if best.as_ref().map_or(true, |(b, _)| rss < *b) {
                    best = Some((
                        rss,
                        GaussianFit {
                            amplitude: a,
                            mean,
                            sigma,
                            offset: c,
                        },
                    ));
                }
            }
        }
    }
    let (_, start) = best.ok_or(Error::FlatCurve)?;
    Ok(levenberg_marquardt(points, start))
}

fn levenberg_marquardt(points: &[(f64, f64)], start: GaussianFit) -> GaussianFit {
    let mut fit = start;
    let mut rss = fit.residual_sum_squares(points);
    let mut damping = 1e-3;
    for _ in 0..500 {
        // normal equations JᵀJ δ = -Jᵀr over (a, μ, σ, c)
        let mut jtj = [0.0; 16];
        let mut jtr = [0.0; 4];
        for &(m, y) in points {
            let d = m - fit.mean;
            let g = (-0.5 * d * d / (fit.sigma * fit.sigma)).exp();
            let r = fit.amplitude * g + fit.offset - y;
            let row = [
                g,
                fit.amplitude * g * d / (fit.sigma * fit.sigma),
                fit.amplitude * g * d * d / fit.sigma.powi(3),
                1.0,
            ];
            for p in 0..4 {
                jtr[p] += row[p] * r;
                for q in 0..4 {
                    jtj[p * 4 + q] += row[p] * row[q];
                }
            }
        }
        let mut improved = false;
        while damping < 1e12 {
            let mut a = jtj;
            for p in 0..4 {
                a[p * 4 + p] += damping * jtj[p * 4 + p].max(1e-12);
            }
            let Ok(chol) = Cholesky::new(&a, 4) else {
                damping *= 10.0;
                continue;
            };
            let step = chol.solve(&jtr.map(|v| -v));
            let cand = GaussianFit {
                amplitude: fit.amplitude + step[0],
                mean: fit.mean + step[1],
                sigma: fit.sigma + step[2],
                offset: fit.offset + step[3],
            };
            let cand_rss = cand.residual_sum_squares(points);
            if cand.sigma > 0.0 && cand_rss.is_finite() && cand_rss <= rss {
                let gain = rss - cand_rss;
                fit = cand;
                rss = cand_rss;
                damping = (damping / 10.0).max(1e-15);
                improved = gain > 1e-30 + 1e-15 * rss;
                break;
            }
            damping *= 10.0;
        }
        if !improved {
            break;
        }
    }
    fit
}

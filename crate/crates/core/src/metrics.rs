//! Consistency and fidelity metrics that need no pretrained network.
//!
//! * `temporal_flicker` — mean squared difference between frame pairs of a
//!   `[n, w, ..]` sequence, split into consecutive frames inside a window and
//!   the same frame position in adjacent windows.
//! * `cross_view_inconsistency` — mean squared deviation from the cross-view
//!   mean after pulling every view back to canonical space.
//! * `psnr`, `ssim` — standard image fidelity measures.
//! * `empirical_correlation` — Pearson correlation between noise blocks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::StructuredNoise;
use crate::pipeline::scene::{pull_back, Geometry, ViewMap};
use crate::tensor::Tensor;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

/// Flicker of one `[n, w, ..]` sequence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlickerReport {
    /// Mean over `(i, f) -> (i, f + 1)` pairs; `None` when `w = 1`.
    pub intra_window: Option<f64>,
    /// Mean over `(i, f) -> (i + 1, f)` pairs; `None` when `n = 1`.
    pub inter_window: Option<f64>,
    /// Mean over all pairs of both kinds.
    pub pooled: f64,
    pub pairs: usize,
}

fn mean_sq_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

/// `latents` is `[n, w, ..]`: `n` windows of `w` frames each.
pub fn temporal_flicker(latents: &Tensor) -> Result<FlickerReport> {
    let s = latents.shape();
    if s.len() < 2 {
        return Err(Error::InvalidShape {
            shape: s.to_vec(),
            reason: "expected [n, w, ..] frames".into(),
        });
    }
    let (n, w) = (s[0], s[1]);
    if n * w < 2 {
        return Err(Error::UndefinedMetric(
            "temporal flicker needs at least two frames".into(),
        ));
    }
    let frame_len = latents.len() / (n * w);
    let frame = |i: usize, f: usize| {
        let start = (i * w + f) * frame_len;
        &latents.data()[start..start + frame_len]
    };
    let (mut intra_sum, mut intra_n) = (0.0, 0usize);
    let (mut inter_sum, mut inter_n) = (0.0, 0usize);
    for i in 0..n {
        for f in 0..w {
            if f + 1 < w {
                intra_sum += mean_sq_diff(frame(i, f), frame(i, f + 1));
                intra_n += 1;
            }
            if i + 1 < n {
                inter_sum += mean_sq_diff(frame(i, f), frame(i + 1, f));
                inter_n += 1;
            }
        }
    }
    let avg = |sum: f64, count: usize| (count > 0).then(|| sum / count as f64);
    let pairs = intra_n + inter_n;
    Ok(FlickerReport {
        intra_window: avg(intra_sum, intra_n),
        inter_window: avg(inter_sum, inter_n),
        pooled: (intra_sum + inter_sum) / pairs as f64,
        pairs,
    })
}

/// Inconsistency value and the number of canonical elements it averages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Inconsistency {
    pub value: f64,
    pub elements: usize,
}

/// For every canonical element seen by at least two views, the population
/// variance of the pulled-back view values; averaged over those elements.
/// `views` is `[K, .., H, W]`.
pub fn cross_view_inconsistency(
    views: &Tensor,
    maps: &[ViewMap],
    geometry: &Geometry,
) -> Result<Inconsistency> {
    geometry.view_leading(views, maps)?;
    if maps.len() < 2 {
        return Err(Error::UndefinedMetric(
            "cross-view inconsistency needs at least two views".into(),
        ));
    }
    let pulled: Vec<_> = maps
        .iter()
        .enumerate()
        .map(|(k, m)| pull_back(views, k, m, geometry))
        .collect();
    let len = pulled[0].0.len();
    let (mut total, mut elements) = (0.0, 0usize);
    for i in 0..len {
        let seen = || pulled.iter().filter(|(_, c)| c[i]).map(|(v, _)| v[i]);
        let n = seen().count();
        if n >= 2 {
            let mean = seen().sum::<f64>() / n as f64;
            total += seen().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            elements += 1;
        }
    }
    if elements == 0 {
        return Err(Error::UndefinedMetric(
            "no canonical element is covered by two views".into(),
        ));
    }
    Ok(Inconsistency {
        value: total / elements as f64,
        elements,
    })
}

fn check_peak(peak: f64) -> Result<()> {
    if !(peak > 0.0 && peak.is_finite()) {
        return Err(Error::param("peak", format!("must be positive, got {peak}")));
    }
    Ok(())
}

/// `10 log10(peak^2 / mse)`; `f64::INFINITY` for identical inputs.
pub fn psnr(a: &Tensor, b: &Tensor, peak: f64) -> Result<f64> {
    a.ensure_same_shape(b)?;
    check_peak(peak)?;
    let mse = mean_sq_diff(a.data(), b.data());
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let w: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// SSIM with the standard 11-tap Gaussian window (sigma 1.5) and constants
/// `(0.01 peak)^2`, `(0.03 peak)^2`; see [`ssim_with`].
pub fn ssim(a: &Tensor, b: &Tensor, peak: f64) -> Result<f64> {
    ssim_with(a, b, peak, SSIM_WINDOW, SSIM_SIGMA)
}

/// Mean SSIM over every `[H, W]` plane of the trailing two axes, using the
/// window positions that lie fully inside the plane.
pub fn ssim_with(a: &Tensor, b: &Tensor, peak: f64, window: usize, sigma: f64) -> Result<f64> {
    a.ensure_same_shape(b)?;
    check_peak(peak)?;
    let s = a.shape();
    if s.len() < 2 {
        return Err(Error::InvalidShape {
            shape: s.to_vec(),
            reason: "ssim needs at least [H, W]".into(),
        });
    }
    let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
    if window == 0 || h < window || w < window {
        return Err(Error::UndefinedMetric(format!(
            "ssim window {window} does not fit a {h}x{w} plane"
        )));
    }
    let g = gaussian_window(window, sigma);
    let (c1, c2) = ((SSIM_K1 * peak).powi(2), (SSIM_K2 * peak).powi(2));
    let plane = h * w;
    let (mut total, mut count) = (0.0, 0usize);
    for (pa, pb) in a.data().chunks(plane).zip(b.data().chunks(plane)) {
        for y0 in 0..=h - window {
            for x0 in 0..=w - window {
                let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for (dy, gy) in g.iter().enumerate() {
                    for (dx, gx) in g.iter().enumerate() {
                        let wt = gy * gx;
                        let idx = (y0 + dy) * w + x0 + dx;
                        let (u, v) = (pa[idx], pb[idx]);
                        ma += wt * u;
                        mb += wt * v;
                        saa += wt * u * u;
                        sbb += wt * v * v;
                        sab += wt * u * v;
                    }
                }
                let (va, vb, cov) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
                total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                    / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                count += 1;
            }
        }
    }
    Ok(total / count as f64)
}

/// Running sums for a Pearson correlation pooled over several samples.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CorrelationAccumulator {
    n: usize,
    sx: f64,
    sy: f64,
    sxx: f64,
    syy: f64,
    sxy: f64,
}

impl CorrelationAccumulator {
    pub fn push(&mut self, x: &[f64], y: &[f64]) -> Result<()> {
        if x.len() != y.len() {
            return Err(Error::ShapeMismatch {
                expected: vec![x.len()],
                actual: vec![y.len()],
            });
        }
        for (a, b) in x.iter().zip(y) {
            self.sx += a;
            self.sy += b;
            self.sxx += a * a;
            self.syy += b * b;
            self.sxy += a * b;
        }
        self.n += x.len();
        Ok(())
    }

    pub fn count(&self) -> usize {
        self.n
    }

    pub fn correlation(&self) -> Result<f64> {
        if self.n < 2 {
            return Err(Error::DegenerateVariance(format!(
                "{} paired elements",
                self.n
            )));
        }
        let n = self.n as f64;
        let cov = self.sxy - self.sx * self.sy / n;
        let vx = self.sxx - self.sx * self.sx / n;
        let vy = self.syy - self.sy * self.sy / n;
        if !(vx > 0.0 && vy > 0.0) {
            return Err(Error::DegenerateVariance(
                "one side of the pair has zero variance".into(),
            ));
        }
        Ok((cov / (vx * vy).sqrt()).clamp(-1.0, 1.0))
    }
}

/// Pearson correlation between blocks `a = (view, window)` and `b`, pairing
/// elements at the same intra-block position.
pub fn empirical_correlation(
    noise: &StructuredNoise,
    a: (usize, usize),
    b: (usize, usize),
) -> Result<f64> {
    let mut acc = CorrelationAccumulator::default();
    acc.push(noise.block(a.0, a.1)?, noise.block(b.0, b.1)?)?;
    acc.correlation()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleCounts {
    pub views: usize,
    pub frame_pairs_per_view: usize,
    pub canonical_elements: usize,
    pub fidelity_elements: usize,
}

/// Metrics of one set of edited per-view latents `[K, n, w, C, H, W]`.
///
/// Flicker is measured on edit residuals (`edited - original`); PSNR and SSIM
/// compare the edited latents with the edit target. `psnr` is `None` only in
/// serialized form when it is infinite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub temporal_flicker: f64,
    pub temporal_flicker_per_view: Vec<f64>,
    pub inter_window_flicker: Option<f64>,
    pub cross_view_inconsistency: f64,
    pub psnr: f64,
    /// `None` when the planes are smaller than the SSIM window.
    pub ssim: Option<f64>,
    pub sample_counts: SampleCounts,
}

impl MetricsReport {
    pub fn compute(
        edited: &Tensor,
        original: &Tensor,
        target: &Tensor,
        maps: &[ViewMap],
        geometry: &Geometry,
        peak: f64,
    ) -> Result<Self> {
        edited.ensure_same_shape(original)?;
        edited.ensure_same_shape(target)?;
        let residual = edited.sub(original)?;
        let flicker: Vec<FlickerReport> = residual
            .unstack()
            .iter()
            .map(temporal_flicker)
            .collect::<Result<_>>()?;
        let k = flicker.len() as f64;
        let inter_window_flicker = flicker
            .iter()
            .map(|f| f.inter_window)
            .sum::<Option<f64>>()
            .map(|s| s / k);
        let inconsistency = cross_view_inconsistency(edited, maps, geometry)?;
        let ssim = match ssim(edited, target, peak) {
            Ok(v) => Some(v),
            Err(Error::UndefinedMetric(_)) => None,
            Err(e) => return Err(e),
        };
        Ok(Self {
            temporal_flicker: flicker.iter().map(|f| f.pooled).sum::<f64>() / k,
            temporal_flicker_per_view: flicker.iter().map(|f| f.pooled).collect(),
            inter_window_flicker,
            cross_view_inconsistency: inconsistency.value,
            psnr: psnr(edited, target, peak)?,
            ssim,
            sample_counts: SampleCounts {
                views: flicker.len(),
                frame_pairs_per_view: flicker[0].pairs,
                canonical_elements: inconsistency.elements,
                fidelity_elements: edited.len(),
            },
        })
    }
}

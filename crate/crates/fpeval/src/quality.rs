//! Fingerprint-reader white-box evaluation: block-wise image quality metrics.
//!
//! Three metrics, each reported in `[0, 1]` with higher meaning better ridge
//! structure:
//!
//! * OCL — mean coherence of the block-wise gradient covariance eigen-analysis.
//! * RF  — fraction of foreground blocks whose dominant ridge frequency falls
//!   inside the physically plausible band.
//! * GOQ — smoothness of the orientation field across neighboring blocks.
//!
//! All three are gradient based, so they are invariant to adding a constant
//! intensity offset.

use crate::types::GrayscaleImage;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Block side for the orientation field, holding 3-4 ridge periods at 500 dpi.
pub const DEFAULT_BLOCK_PX: u32 = 32;

/// Foreground floor: a block is background when its gradient energy is below
/// this fraction of the image's mean block energy.
const FOREGROUND_ENERGY_FRACTION: f64 = 0.05;

/// Absolute energy floor so a constant image yields an all-background field.
const MIN_BLOCK_ENERGY: f64 = 1e-6;

/// Valid ridge-frequency band in cycles/px, bracketing the ~9 px ridge period
/// of 500 dpi impressions with generous margin.
pub const RF_VALID_BAND: (f64, f64) = (1.0 / 25.0, 1.0 / 3.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum QualityMetric {
    Goq,
    Rf,
    Ocl,
}

impl QualityMetric {
    pub const ALL: [QualityMetric; 3] = [QualityMetric::Goq, QualityMetric::Rf, QualityMetric::Ocl];

    pub fn label(&self) -> &'static str {
        match self {
            QualityMetric::Goq => "GOQ",
            QualityMetric::Rf => "RF",
            QualityMetric::Ocl => "OCL",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityScore {
    pub metric: QualityMetric,
    pub value: f64,
}

/// Block-wise orientation field from gradient covariance eigen-analysis.
#[derive(Debug, Clone, PartialEq)]
pub struct OrientationField {
    pub cols: u32,
    pub rows: u32,
    pub block: u32,
    /// Dominant gradient-axis orientation per block, radians in `[0, π)`.
    /// (The ridge direction is perpendicular to this axis.)
    pub orientation: Vec<f64>,
    /// Coherence `(λ1 - λ2) / (λ1 + λ2)` per block, in `[0, 1]`.
    pub coherence: Vec<f64>,
    /// Foreground mask per block.
    pub foreground: Vec<bool>,
}

impl OrientationField {
    pub fn foreground_count(&self) -> usize {
        self.foreground.iter().filter(|&&f| f).count()
    }
}

/// Compute the block-wise orientation field of an impression.
///
/// Gradients are central differences with replicated borders. Per block the
/// covariance entries `Gxx, Gyy, Gxy` give the dominant gradient axis
/// `0.5 * atan2(2 Gxy, Gxx - Gyy)` and coherence. Low-energy blocks are
/// masked as background; a constant image yields an all-background field.
pub fn orientation_field(image: &GrayscaleImage, block: u32) -> OrientationField {
    assert!(block >= 8, "block side must be at least 8 px");
    let w = image.width() as usize;
    let h = image.height() as usize;
    let cols = image.width().div_ceil(block).max(1);
    let rows = image.height().div_ceil(block).max(1);
    let nblocks = cols as usize * rows as usize;

    // central-difference gradients, borders replicated
    let px = image.pixels();
    let at = |x: usize, y: usize| -> f64 { f64::from(px[y * w + x]) };
    let mut gxx = vec![0.0f64; nblocks];
    let mut gyy = vec![0.0f64; nblocks];
    let mut gxy = vec![0.0f64; nblocks];
    for y in 0..h {
        let ym = y.saturating_sub(1);
        let yp = (y + 1).min(h - 1);
        let brow = y / block as usize;
        for x in 0..w {
            let xm = x.saturating_sub(1);
            let xp = (x + 1).min(w - 1);
            let gx = (at(xp, y) - at(xm, y)) / 2.0;
            let gy = (at(x, yp) - at(x, ym)) / 2.0;
            let b = brow * cols as usize + x / block as usize;
            gxx[b] += gx * gx;
            gyy[b] += gy * gy;
            gxy[b] += gx * gy;
        }
    }

    let energies: Vec<f64> = (0..nblocks).map(|b| gxx[b] + gyy[b]).collect();
    let mean_energy = energies.iter().sum::<f64>() / nblocks as f64;
    let floor = (FOREGROUND_ENERGY_FRACTION * mean_energy).max(MIN_BLOCK_ENERGY);

    let mut orientation = vec![0.0f64; nblocks];
    let mut coherence = vec![0.0f64; nblocks];
    let mut foreground = vec![false; nblocks];
    for b in 0..nblocks {
        if energies[b] < floor {
            continue;
        }
        foreground[b] = true;
        let mut phi = 0.5 * (2.0 * gxy[b]).atan2(gxx[b] - gyy[b]);
        if phi < 0.0 {
            phi += PI;
        }
        if phi >= PI {
            phi = 0.0;
        }
        orientation[b] = phi;
        // (λ1-λ2)/(λ1+λ2) without an explicit eigendecomposition
        coherence[b] = ((gxx[b] - gyy[b]).hypot(2.0 * gxy[b]) / energies[b]).clamp(0.0, 1.0);
    }

    OrientationField {
        cols,
        rows,
        block,
        orientation,
        coherence,
        foreground,
    }
}

/// Orientation Certainty Level: mean coherence over foreground blocks.
pub fn ocl(image: &GrayscaleImage) -> QualityScore {
    let field = orientation_field(image, DEFAULT_BLOCK_PX);
    let fg = field.foreground_count();
    let value = if fg == 0 {
        0.0
    } else {
        field
            .coherence
            .iter()
            .zip(&field.foreground)
            .filter(|(_, &f)| f)
            .map(|(c, _)| *c)
            .sum::<f64>()
            / fg as f64
    };
    QualityScore {
        metric: QualityMetric::Ocl,
        value: value.clamp(0.0, 1.0),
    }
}

/// Estimate the dominant spatial frequency of a block by projecting its
/// pixels onto the gradient axis and scanning sinusoid amplitudes.
///
/// Returns `None` when the block has no usable signature.
fn block_frequency(image: &GrayscaleImage, field: &OrientationField, bx: u32, by: u32) -> Option<f64> {
    let b = field.block;
    let x0 = bx * b;
    let y0 = by * b;
    let x1 = (x0 + b).min(image.width());
    let y1 = (y0 + b).min(image.height());
    let phi = field.orientation[(by * field.cols + bx) as usize];
    let (ux, uy) = (phi.cos(), phi.sin());

    // project onto the oscillation axis, bin by rounded projected coordinate
    let span = 2 * b as usize + 3;
    let mut sum = vec![0.0f64; span];
    let mut count = vec![0u32; span];
    let offset = b as f64; // projections fall in roughly [-b, b*sqrt(2)]
    for y in y0..y1 {
        for x in x0..x1 {
            let t = (f64::from(x) - f64::from(x0)) * ux + (f64::from(y) - f64::from(y0)) * uy;
            let bin = (t + offset).round();
            if bin < 0.0 || bin as usize >= span {
                continue;
            }
            sum[bin as usize] += f64::from(image.get(x, y));
            count[bin as usize] += 1;
        }
    }
    let signature: Vec<(f64, f64)> = (0..span)
        .filter(|&i| count[i] > 0)
        .map(|i| (i as f64 - offset, sum[i] / f64::from(count[i])))
        .collect();
    if signature.len() < 6 {
        return None;
    }
    let mean = signature.iter().map(|&(_, v)| v).sum::<f64>() / signature.len() as f64;

    // amplitude scan over candidate frequencies; fine enough for <2% error
    let mut best = (0.0f64, 0.0f64);
    let mut f = 0.02;
    while f <= 0.5 {
        let (mut c, mut s) = (0.0f64, 0.0f64);
        for &(t, v) in &signature {
            let arg = 2.0 * PI * f * t;
            c += (v - mean) * arg.cos();
            s += (v - mean) * arg.sin();
        }
        let amp = c.hypot(s);
        if amp > best.1 {
            best = (f, amp);
        }
        f += 0.001;
    }
    if best.1 > 0.0 {
        Some(best.0)
    } else {
        None
    }
}

/// Ridge Frequency score: fraction of foreground blocks whose estimated
/// frequency falls in [`RF_VALID_BAND`].
pub fn ridge_frequency(image: &GrayscaleImage) -> QualityScore {
    let (score, _) = ridge_frequency_detail(image);
    score
}

/// As [`ridge_frequency`], also returning the per-block estimates
/// (block index, cycles/px) for diagnostics and tests.
pub fn ridge_frequency_detail(image: &GrayscaleImage) -> (QualityScore, Vec<(usize, f64)>) {
    let field = orientation_field(image, DEFAULT_BLOCK_PX);
    let fg = field.foreground_count();
    let mut estimates = Vec::new();
    let mut good = 0usize;
    for by in 0..field.rows {
        for bx in 0..field.cols {
            let idx = (by * field.cols + bx) as usize;
            if !field.foreground[idx] {
                continue;
            }
            if let Some(freq) = block_frequency(image, &field, bx, by) {
                estimates.push((idx, freq));
                if freq >= RF_VALID_BAND.0 && freq <= RF_VALID_BAND.1 {
                    good += 1;
                }
            }
        }
    }
    let value = if fg == 0 { 0.0 } else { good as f64 / fg as f64 };
    (
        QualityScore {
            metric: QualityMetric::Rf,
            value: value.clamp(0.0, 1.0),
        },
        estimates,
    )
}

/// Wrap an orientation difference (mod π) into `[-π/2, π/2]`.
fn orientation_delta(a: f64, b: f64) -> f64 {
    let d = (a - b + PI / 2.0).rem_euclid(PI) - PI / 2.0;
    if d >= PI / 2.0 {
        d - PI
    } else {
        d
    }
}

/// Global Orientation Quality: smoothness of the orientation field.
///
/// One minus the mean absolute orientation difference between each foreground
/// block and its foreground 8-neighbors, normalized by π/2.
pub fn goq(image: &GrayscaleImage) -> QualityScore {
    let field = orientation_field(image, DEFAULT_BLOCK_PX);
    let mut diffs = Vec::new();
    for by in 0..field.rows as i64 {
        for bx in 0..field.cols as i64 {
            let idx = (by * field.cols as i64 + bx) as usize;
            if !field.foreground[idx] {
                continue;
            }
            let mut acc = 0.0f64;
            let mut n = 0usize;
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let (nx, ny) = (bx + dx, by + dy);
                    if nx < 0 || ny < 0 || nx >= field.cols as i64 || ny >= field.rows as i64 {
                        continue;
                    }
                    let nidx = (ny * field.cols as i64 + nx) as usize;
                    if !field.foreground[nidx] {
                        continue;
                    }
                    acc += orientation_delta(field.orientation[idx], field.orientation[nidx]).abs();
                    n += 1;
                }
            }
            if n > 0 {
                diffs.push(acc / n as f64);
            }
        }
    }
    let value = if field.foreground_count() == 0 || diffs.is_empty() {
        0.0
    } else {
        1.0 - diffs.iter().sum::<f64>() / diffs.len() as f64 / (PI / 2.0)
    };
    QualityScore {
        metric: QualityMetric::Goq,
        value: value.clamp(0.0, 1.0),
    }
}

/// Compute one metric on one impression.
pub fn compute_metric(image: &GrayscaleImage, metric: QualityMetric) -> QualityScore {
    match metric {
        QualityMetric::Goq => goq(image),
        QualityMetric::Rf => ridge_frequency(image),
        QualityMetric::Ocl => ocl(image),
    }
}

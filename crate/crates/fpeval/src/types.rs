//! Shared domain types: minutiae templates, grayscale impressions, capture
//! conditions, and minutiae correspondences.
//!
//! Coordinate convention: `x` is the column index increasing rightward, `y` is
//! the row index increasing downward (raw pixel frame). All geometry in this
//! crate (rotation, distances) operates in that frame. Minutia orientations are
//! stored wrapped to `[0, 2π)` with no 180-degree folding.

use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TypeError {
    #[error("angle must be finite, got {0}")]
    NonFiniteAngle(f64),
    #[error("coordinate must be finite, got ({x}, {y})")]
    NonFiniteCoordinate { x: f64, y: f64 },
    #[error("quality {0} outside [0, 1]")]
    QualityOutOfRange(f64),
    #[error("minutia {index} at ({x}, {y}) outside image bounds {width}x{height}")]
    OutOfBounds {
        index: usize,
        x: f64,
        y: f64,
        width: u32,
        height: u32,
    },
    #[error("pixel buffer length {len} does not match {width}x{height}")]
    PixelCountMismatch { len: usize, width: u32, height: u32 },
    #[error("condition metadata must be positive: {0}")]
    NonPositiveMetadata(&'static str),
}

/// Wrap an angle to the canonical `[0, 2π)` range.
pub fn wrap_angle(theta: f64) -> Result<f64, TypeError> {
    if !theta.is_finite() {
        return Err(TypeError::NonFiniteAngle(theta));
    }
    let r = theta.rem_euclid(TAU);
    // rem_euclid may round up to exactly 2π for tiny negative inputs.
    Ok(if r >= TAU { 0.0 } else { r })
}

/// A single minutia point: location in pixels plus ridge orientation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Minutia {
    pub x: f64,
    pub y: f64,
    /// Orientation in radians, always in `[0, 2π)`.
    pub theta: f64,
    /// Optional extractor confidence in `[0, 1]`. Ground-truth annotations
    /// typically omit it.
    pub quality: Option<f64>,
}

impl Minutia {
    pub fn new(x: f64, y: f64, theta: f64, quality: Option<f64>) -> Result<Self, TypeError> {
        if !x.is_finite() || !y.is_finite() {
            return Err(TypeError::NonFiniteCoordinate { x, y });
        }
        if let Some(q) = quality {
            if !(0.0..=1.0).contains(&q) {
                return Err(TypeError::QualityOutOfRange(q));
            }
        }
        Ok(Self {
            x,
            y,
            theta: wrap_angle(theta)?,
            quality,
        })
    }

    pub fn distance(&self, other: &Minutia) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// An ordered minutiae template tied to the dimensions of its source image.
///
/// Immutable after construction. [`MinutiaeSet::new`] enforces that every
/// minutia lies inside the image; perturbation operators use
/// [`MinutiaeSet::relaxed`] because rotated points may leave the frame and are
/// deliberately retained (see [`MinutiaeSet::out_of_bounds_indices`]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinutiaeSet {
    minutiae: Vec<Minutia>,
    width: u32,
    height: u32,
    resolution: u32,
}

pub const DEFAULT_RESOLUTION_DPI: u32 = 500;

impl MinutiaeSet {
    /// Bounds-checked construction: every minutia must satisfy
    /// `0 <= x < width` and `0 <= y < height`.
    pub fn new(
        minutiae: Vec<Minutia>,
        width: u32,
        height: u32,
        resolution: u32,
    ) -> Result<Self, TypeError> {
        for (index, m) in minutiae.iter().enumerate() {
            let in_x = m.x >= 0.0 && m.x < f64::from(width);
            let in_y = m.y >= 0.0 && m.y < f64::from(height);
            if !in_x || !in_y {
                return Err(TypeError::OutOfBounds {
                    index,
                    x: m.x,
                    y: m.y,
                    width,
                    height,
                });
            }
        }
        Ok(Self {
            minutiae,
            width,
            height,
            resolution,
        })
    }

    /// Construction without the bounds check, for perturbed sets that keep
    /// out-of-frame minutiae.
    pub fn relaxed(minutiae: Vec<Minutia>, width: u32, height: u32, resolution: u32) -> Self {
        Self {
            minutiae,
            width,
            height,
            resolution,
        }
    }

    pub fn minutiae(&self) -> &[Minutia] {
        &self.minutiae
    }

    pub fn len(&self) -> usize {
        self.minutiae.len()
    }

    pub fn is_empty(&self) -> bool {
        self.minutiae.is_empty()
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn resolution(&self) -> u32 {
        self.resolution
    }

    pub fn same_dimensions(&self, other: &MinutiaeSet) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Indices of minutiae lying outside the image frame (possible after
    /// global rotation).
    pub fn out_of_bounds_indices(&self) -> Vec<usize> {
        self.minutiae
            .iter()
            .enumerate()
            .filter(|(_, m)| {
                m.x < 0.0 || m.x >= f64::from(self.width) || m.y < 0.0 || m.y >= f64::from(self.height)
            })
            .map(|(i, _)| i)
            .collect()
    }
}

/// An 8-bit grayscale fingerprint impression.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayscaleImage {
    pixels: Vec<u8>,
    width: u32,
    height: u32,
    resolution: u32,
}

impl GrayscaleImage {
    pub fn new(pixels: Vec<u8>, width: u32, height: u32, resolution: u32) -> Result<Self, TypeError> {
        if pixels.len() != width as usize * height as usize {
            return Err(TypeError::PixelCountMismatch {
                len: pixels.len(),
                width,
                height,
            });
        }
        Ok(Self {
            pixels,
            width,
            height,
            resolution,
        })
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn resolution(&self) -> u32 {
        self.resolution
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.pixels[y as usize * self.width as usize + x as usize]
    }
}

/// Acquisition-time condition class for an impression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CaptureCondition {
    Normal,
    DryFinger,
    WetFinger,
    LowPressure,
    HighPressure,
    BrightLighting,
    DarkLighting,
}

impl CaptureCondition {
    pub const ALL: [CaptureCondition; 7] = [
        CaptureCondition::Normal,
        CaptureCondition::DryFinger,
        CaptureCondition::WetFinger,
        CaptureCondition::LowPressure,
        CaptureCondition::HighPressure,
        CaptureCondition::BrightLighting,
        CaptureCondition::DarkLighting,
    ];

    /// The six adverse (non-normal) conditions, in report row order.
    pub const ADVERSE: [CaptureCondition; 6] = [
        CaptureCondition::DryFinger,
        CaptureCondition::WetFinger,
        CaptureCondition::LowPressure,
        CaptureCondition::HighPressure,
        CaptureCondition::BrightLighting,
        CaptureCondition::DarkLighting,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            CaptureCondition::Normal => "Normal",
            CaptureCondition::DryFinger => "Dry finger",
            CaptureCondition::WetFinger => "Wet finger",
            CaptureCondition::LowPressure => "Low pressure",
            CaptureCondition::HighPressure => "High pressure",
            CaptureCondition::BrightLighting => "Bright lighting",
            CaptureCondition::DarkLighting => "Dark lighting",
        }
    }
}

/// Dataset-supplied physical measurements behind a capture condition.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ConditionMetadata {
    pub illumination_lux: Option<f64>,
    pub pressure_kpa: Option<f64>,
    pub moisture_pct: Option<f64>,
}

impl ConditionMetadata {
    pub fn validate(&self) -> Result<(), TypeError> {
        if self.illumination_lux.is_some_and(|v| v <= 0.0) {
            return Err(TypeError::NonPositiveMetadata("illumination_lux"));
        }
        if self.pressure_kpa.is_some_and(|v| v <= 0.0) {
            return Err(TypeError::NonPositiveMetadata("pressure_kpa"));
        }
        if self.moisture_pct.is_some_and(|v| v <= 0.0) {
            return Err(TypeError::NonPositiveMetadata("moisture_pct"));
        }
        Ok(())
    }
}

/// One matched (ground truth, detected) minutia pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinutiaPair {
    pub ground: usize,
    pub detected: usize,
    pub distance: f64,
    /// Signed orientation difference in `[-π, π)`.
    pub orientation_diff: f64,
}

/// An injective correspondence between a ground-truth and a detected set
/// under a distance threshold.
///
/// Built by `extractor::pair_minutiae`; the pairs plus the unpaired lists
/// exactly partition both input sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pairing {
    pub pairs: Vec<MinutiaPair>,
    pub unpaired_ground: Vec<usize>,
    pub unpaired_detected: Vec<usize>,
}

impl Pairing {
    pub fn paired_count(&self) -> usize {
        self.pairs.len()
    }
}

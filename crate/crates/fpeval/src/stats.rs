//! Hypothesis testing and recognition-rate statistics: pooled-variance
//! two-sample t-tests with fixed significance banding, and FNMR at an
//! empirically derived FAR threshold.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("sample needs at least {required} values, got {got}")]
    TooFewValues { required: usize, got: usize },
    #[error("zero pooled variance with unequal means is degenerate")]
    DegenerateVariance,
    #[error("FAR must be in (0, 1), got {0}")]
    InvalidFar(f64),
    #[error("sample contains a non-finite value")]
    NonFinite,
}

/// Significance band for a t statistic, banded on `|t|`.
///
/// The thresholds correspond to a 120-DOF test: 1.658 is the 95% two-sample
/// critical value, 5 and 10 mark increasingly extreme separations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Band {
    None,
    Yellow,
    Orange,
    Red,
}

impl Band {
    pub fn from_t(t: f64) -> Band {
        let a = t.abs();
        if a > 10.0 {
            Band::Red
        } else if a > 5.0 {
            Band::Orange
        } else if a > 1.658 {
            Band::Yellow
        } else {
            Band::None
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Band::None => "none",
            Band::Yellow => "yellow",
            Band::Orange => "orange",
            Band::Red => "red",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTestResult {
    pub t: f64,
    pub dof: usize,
    pub band: Band,
}

fn mean_and_ss(sample: &[f64]) -> Result<(f64, f64), StatsError> {
    if sample.iter().any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let n = sample.len() as f64;
    let mean = sample.iter().sum::<f64>() / n;
    let ss = sample.iter().map(|v| (v - mean).powi(2)).sum::<f64>();
    Ok((mean, ss))
}

/// Student's two-sample t with pooled variance; `dof = |a| + |b| - 2`.
pub fn two_sample_t(a: &[f64], b: &[f64]) -> Result<TTestResult, StatsError> {
    for s in [a, b] {
        if s.len() < 2 {
            return Err(StatsError::TooFewValues {
                required: 2,
                got: s.len(),
            });
        }
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mean_a, ss_a) = mean_and_ss(a)?;
    let (mean_b, ss_b) = mean_and_ss(b)?;
    let dof = a.len() + b.len() - 2;
    let pooled = (ss_a + ss_b) / dof as f64;
    // Constant samples leave summation rounding noise in both the mean gap
    // and the pooled variance; their ratio is garbage, so deviations at the
    // accumulation-error scale count as zero.
    let scale = a.iter().chain(b.iter()).fold(0.0f64, |m, &v| m.max(v.abs()));
    let noise = f64::EPSILON * scale * (na + nb);
    let t = if pooled.sqrt() <= noise {
        if (mean_a - mean_b).abs() <= noise {
            0.0
        } else {
            return Err(StatsError::DegenerateVariance);
        }
    } else {
        (mean_a - mean_b) / (pooled * (1.0 / na + 1.0 / nb)).sqrt()
    };
    Ok(TTestResult {
        t,
        dof,
        band: Band::from_t(t),
    })
}

/// Smallest threshold such that the fraction of impostor scores at or above
/// it does not exceed `far` (higher score = more similar).
///
/// Tie-breaking is deterministic: the threshold sits at the midpoint between
/// the adjacent distinct scores, or just above the boundary score when
/// nothing lies beyond it.
pub fn threshold_at_far(impostor: &[f64], far: f64) -> Result<f64, StatsError> {
    if impostor.is_empty() {
        return Err(StatsError::TooFewValues {
            required: 1,
            got: 0,
        });
    }
    if !(far > 0.0 && far < 1.0) {
        return Err(StatsError::InvalidFar(far));
    }
    if impostor.iter().any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let mut sorted = impostor.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap()); // descending
    let allowed = (far * sorted.len() as f64).floor() as usize;
    // sorted[allowed] is the first score that must fall below the threshold
    let boundary = sorted[allowed];
    let above = sorted[..allowed]
        .iter()
        .rev()
        .find(|&&s| s > boundary)
        .copied();
    Ok(match above {
        Some(next) => (boundary + next) / 2.0,
        None => next_up(boundary),
    })
}

fn next_up(v: f64) -> f64 {
    // f64::next_up is stable but spelled out here for clarity on -0.0
    if v == 0.0 {
        f64::MIN_POSITIVE
    } else {
        f64::from_bits(if v > 0.0 {
            v.to_bits() + 1
        } else {
            v.to_bits() - 1
        })
    }
}

/// Fraction of genuine scores strictly below the threshold.
pub fn fnmr_at_threshold(genuine: &[f64], threshold: f64) -> Result<f64, StatsError> {
    if genuine.is_empty() {
        return Err(StatsError::TooFewValues {
            required: 1,
            got: 0,
        });
    }
    let below = genuine.iter().filter(|&&s| s < threshold).count();
    Ok(below as f64 / genuine.len() as f64)
}

/// Empirical FAR at a threshold: fraction of impostor scores at or above it.
pub fn far_at_threshold(impostor: &[f64], threshold: f64) -> Result<f64, StatsError> {
    if impostor.is_empty() {
        return Err(StatsError::TooFewValues {
            required: 1,
            got: 0,
        });
    }
    let at_or_above = impostor.iter().filter(|&&s| s >= threshold).count();
    Ok(at_or_above as f64 / impostor.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn identical_samples_give_zero_t() {
        let a = [1.0, 2.0, 3.0];
        let r = two_sample_t(&a, &a).unwrap();
        assert_eq!(r.t, 0.0);
        assert_eq!(r.band, Band::None);
        assert_eq!(r.dof, 4);
    }

    #[test]
    fn pooled_t_hand_value() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0];
        let b = [3.0, 4.0, 5.0, 6.0, 7.0];
        let r = two_sample_t(&a, &b).unwrap();
        assert_abs_diff_eq!(r.t, -2.0, epsilon = 1e-12);
        assert_eq!(r.dof, 8);
        assert_eq!(r.band, Band::Yellow);
    }

    #[test]
    fn degenerate_variance_cases() {
        let a = [2.0, 2.0];
        let b = [2.0, 2.0];
        assert_eq!(two_sample_t(&a, &b).unwrap().t, 0.0);
        let c = [3.0, 3.0];
        assert_eq!(
            two_sample_t(&a, &c).unwrap_err(),
            StatsError::DegenerateVariance
        );
    }

    #[test]
    fn too_small_samples_rejected() {
        assert!(two_sample_t(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn banding_thresholds() {
        assert_eq!(Band::from_t(2.45), Band::Yellow);
        assert_eq!(Band::from_t(-2.45), Band::Yellow);
        assert_eq!(Band::from_t(1.658), Band::None);
        assert_eq!(Band::from_t(1.659), Band::Yellow);
        assert_eq!(Band::from_t(5.0), Band::Yellow);
        assert_eq!(Band::from_t(5.001), Band::Orange);
        assert_eq!(Band::from_t(10.0), Band::Orange);
        assert_eq!(Band::from_t(10.001), Band::Red);
    }

    #[test]
    fn threshold_quantile_enumeration() {
        let impostor: Vec<f64> = (1..=10).map(|i| i as f64 / 10.0).collect();
        let t = threshold_at_far(&impostor, 0.1).unwrap();
        assert_abs_diff_eq!(t, 0.95, epsilon = 1e-12);
        assert_eq!(impostor.iter().filter(|&&s| s >= t).count(), 1);

        let t = threshold_at_far(&impostor, 0.5).unwrap();
        assert_abs_diff_eq!(t, 0.55, epsilon = 1e-12);
    }

    #[test]
    fn threshold_all_zero_impostors() {
        let impostor = vec![0.0; 100];
        let t = threshold_at_far(&impostor, 0.001).unwrap();
        assert!(t > 0.0);
        assert_eq!(far_at_threshold(&impostor, t).unwrap(), 0.0);
    }

    #[test]
    fn fnmr_counting() {
        assert_eq!(fnmr_at_threshold(&[0.9, 0.8], 0.5).unwrap(), 0.0);
        assert_eq!(fnmr_at_threshold(&[0.1, 0.2], 0.5).unwrap(), 1.0);
        assert_eq!(fnmr_at_threshold(&[0.2, 0.8], 0.5).unwrap(), 0.5);
    }

    #[test]
    fn fnmr_monotone_in_threshold() {
        let genuine: Vec<f64> = (0..50).map(|i| (i as f64 * 0.37).sin().abs()).collect();
        let mut last = 0.0;
        for i in 0..=20 {
            let t = i as f64 / 20.0;
            let f = fnmr_at_threshold(&genuine, t).unwrap();
            assert!(f >= last);
            last = f;
        }
    }
}

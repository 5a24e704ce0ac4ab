//! Minutiae-extractor white-box evaluation: pairing detected minutiae against
//! ground truth and computing detection (Goodness Index) and localization
//! (positional / orientation error) metrics.

use crate::types::{CaptureCondition, MinutiaPair, MinutiaeSet, Pairing};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::f64::consts::{PI, TAU};
use thiserror::Error;

/// Pairing distance threshold in pixels. One ridge period at 500 dpi is about
/// 9 px, so 10 px separates localization error from outright misdetection.
pub const DEFAULT_DELTA_PX: f64 = 10.0;

/// Side of the non-overlapping patches used by the Goodness Index.
pub const PATCH_SIZE_PX: u32 = 16;

#[derive(Debug, Error, PartialEq)]
pub enum ExtractorError {
    #[error("ground and detected sets have different image dimensions")]
    DimensionMismatch,
    #[error("ground-truth set is empty")]
    EmptyGroundTruth,
    #[error("pairing contains no pairs")]
    EmptyPairing,
}

/// Signed difference `theta1 - theta2` wrapped into `[-π, π)`.
pub fn angle_diff(theta1: f64, theta2: f64) -> f64 {
    let d = theta1 - theta2;
    let w = (d + PI).rem_euclid(TAU) - PI;
    if w >= PI {
        w - TAU
    } else {
        w
    }
}

/// Greedy injective matching of detected minutiae to ground truth.
///
/// All candidate pairs with Euclidean distance `<= delta` are sorted by
/// ascending distance, ties broken by ascending absolute orientation
/// difference, then by (ground index, detected index) so the result is
/// bit-reproducible. Each minutia is used at most once.
pub fn pair_minutiae(
    ground: &MinutiaeSet,
    detected: &MinutiaeSet,
    delta: f64,
) -> Result<Pairing, ExtractorError> {
    if !ground.same_dimensions(detected) {
        return Err(ExtractorError::DimensionMismatch);
    }

    let mut candidates: Vec<(f64, f64, usize, usize)> = Vec::new();
    for (gi, g) in ground.minutiae().iter().enumerate() {
        for (di, d) in detected.minutiae().iter().enumerate() {
            let dist = g.distance(d);
            if dist <= delta {
                candidates.push((dist, angle_diff(g.theta, d.theta).abs(), gi, di));
            }
        }
    }
    candidates.sort_by(|a, b| {
        a.0.partial_cmp(&b.0)
            .unwrap()
            .then(a.1.partial_cmp(&b.1).unwrap())
            .then(a.2.cmp(&b.2))
            .then(a.3.cmp(&b.3))
    });

    let mut ground_used = vec![false; ground.len()];
    let mut detected_used = vec![false; detected.len()];
    let mut pairs = Vec::new();
    for (dist, _, gi, di) in candidates {
        if ground_used[gi] || detected_used[di] {
            continue;
        }
        ground_used[gi] = true;
        detected_used[di] = true;
        pairs.push(MinutiaPair {
            ground: gi,
            detected: di,
            distance: dist,
            orientation_diff: angle_diff(
                ground.minutiae()[gi].theta,
                detected.minutiae()[di].theta,
            ),
        });
    }

    Ok(Pairing {
        pairs,
        unpaired_ground: (0..ground.len()).filter(|&i| !ground_used[i]).collect(),
        unpaired_detected: (0..detected.len()).filter(|&i| !detected_used[i]).collect(),
    })
}

/// Per-patch minutia counts on the fixed 16x16 grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchGrid {
    pub cols: u32,
    pub rows: u32,
    /// Ground-truth count per patch (M_i).
    pub ground: Vec<u32>,
    /// Paired count per patch (P_i), indexed by the ground minutia's patch.
    pub paired: Vec<u32>,
    /// Spurious count per patch (D_i) before the 2*M_i clamp, indexed by the
    /// detected minutia's patch.
    pub spurious: Vec<u32>,
    /// Missing count per patch (I_i = M_i - P_i).
    pub missing: Vec<u32>,
}

impl PatchGrid {
    pub fn patch_count(&self) -> usize {
        self.cols as usize * self.rows as usize
    }

    fn patch_index(cols: u32, x: f64, y: f64) -> usize {
        // Overhanging minutiae (x in the last partial patch) still land in
        // exactly one patch via floor division.
        let px = (x / f64::from(PATCH_SIZE_PX)).floor() as u32;
        let py = (y / f64::from(PATCH_SIZE_PX)).floor() as u32;
        py as usize * cols as usize + px as usize
    }

    pub fn build(
        ground: &MinutiaeSet,
        detected: &MinutiaeSet,
        pairing: &Pairing,
    ) -> Result<Self, ExtractorError> {
        if !ground.same_dimensions(detected) {
            return Err(ExtractorError::DimensionMismatch);
        }
        let cols = ground.width().div_ceil(PATCH_SIZE_PX).max(1);
        let rows = ground.height().div_ceil(PATCH_SIZE_PX).max(1);
        let n = cols as usize * rows as usize;
        let mut grid = PatchGrid {
            cols,
            rows,
            ground: vec![0; n],
            paired: vec![0; n],
            spurious: vec![0; n],
            missing: vec![0; n],
        };
        for m in ground.minutiae() {
            grid.ground[Self::patch_index(cols, m.x, m.y)] += 1;
        }
        for p in &pairing.pairs {
            let m = &ground.minutiae()[p.ground];
            grid.paired[Self::patch_index(cols, m.x, m.y)] += 1;
        }
        for &di in &pairing.unpaired_detected {
            let m = &detected.minutiae()[di];
            grid.spurious[Self::patch_index(cols, m.x, m.y)] += 1;
        }
        for i in 0..n {
            grid.missing[i] = grid.ground[i] - grid.paired[i];
        }
        Ok(grid)
    }
}

/// Goodness Index over the 16x16 patch grid, in `[-3, 1]`.
///
/// Per patch with ground truth present the contribution is
/// `P_i - min(D_i, 2*M_i) - I_i`; patches without ground truth are skipped,
/// so spurious minutiae falling there do not count. The sum is divided by the
/// total ground-truth count.
pub fn goodness_index(
    ground: &MinutiaeSet,
    detected: &MinutiaeSet,
    pairing: &Pairing,
) -> Result<f64, ExtractorError> {
    if ground.is_empty() {
        return Err(ExtractorError::EmptyGroundTruth);
    }
    let grid = PatchGrid::build(ground, detected, pairing)?;
    let mut numerator = 0i64;
    let mut denominator = 0i64;
    for i in 0..grid.patch_count() {
        let m = i64::from(grid.ground[i]);
        if m == 0 {
            continue;
        }
        let p = i64::from(grid.paired[i]);
        let d = i64::from(grid.spurious[i]).min(2 * m);
        let miss = i64::from(grid.missing[i]);
        numerator += p - d - miss;
        denominator += m;
    }
    Ok(numerator as f64 / denominator as f64)
}

/// Root mean squared positional deviation over paired minutiae, in pixels.
pub fn positional_error(
    ground: &MinutiaeSet,
    detected: &MinutiaeSet,
    pairing: &Pairing,
) -> Result<f64, ExtractorError> {
    if pairing.pairs.is_empty() {
        return Err(ExtractorError::EmptyPairing);
    }
    let sum: f64 = pairing
        .pairs
        .iter()
        .map(|p| {
            let g = &ground.minutiae()[p.ground];
            let d = &detected.minutiae()[p.detected];
            (g.x - d.x).powi(2) + (g.y - d.y).powi(2)
        })
        .sum();
    Ok((sum / pairing.pairs.len() as f64).sqrt())
}

/// Root mean squared orientation deviation over paired minutiae, in radians.
pub fn orientation_error(
    ground: &MinutiaeSet,
    detected: &MinutiaeSet,
    pairing: &Pairing,
) -> Result<f64, ExtractorError> {
    if pairing.pairs.is_empty() {
        return Err(ExtractorError::EmptyPairing);
    }
    let sum: f64 = pairing
        .pairs
        .iter()
        .map(|p| {
            let g = &ground.minutiae()[p.ground];
            let d = &detected.minutiae()[p.detected];
            angle_diff(g.theta, d.theta).powi(2)
        })
        .sum();
    Ok((sum / pairing.pairs.len() as f64).sqrt())
}

/// Mean and standard deviation of one metric across cases.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
    pub n: usize,
}

impl MeanSd {
    pub fn from_values(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self::default();
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let sd = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, sd, n }
    }
}

/// Per-condition detection and localization statistics (one table row group).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionStats {
    pub cases: usize,
    pub paired_ratio: MeanSd,
    pub missing_ratio: MeanSd,
    pub spurious_ratio: MeanSd,
    pub goodness_index: MeanSd,
    pub positional_error_px: MeanSd,
    pub orientation_error_rad: MeanSd,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ExtractorReport {
    pub by_condition: BTreeMap<CaptureCondition, ConditionStats>,
    /// Cases dropped because a per-case metric failed (e.g. empty pairing).
    pub excluded: usize,
}

/// Aggregate per-case metrics into per-condition means and deviations.
///
/// Ratios are averaged per image; the deviation is across images. A case whose
/// metrics cannot be computed (empty ground truth or empty pairing) is
/// excluded from every aggregate and counted.
pub fn extractor_report(
    cases: &[(MinutiaeSet, MinutiaeSet, CaptureCondition)],
) -> ExtractorReport {
    #[derive(Default)]
    struct Acc {
        paired: Vec<f64>,
        missing: Vec<f64>,
        spurious: Vec<f64>,
        gi: Vec<f64>,
        ep: Vec<f64>,
        etheta: Vec<f64>,
    }

    let mut acc: BTreeMap<CaptureCondition, Acc> = BTreeMap::new();
    let mut excluded = 0usize;

    for (ground, detected, condition) in cases {
        let case = (|| -> Result<(f64, f64, f64, f64, f64, f64), ExtractorError> {
            if ground.is_empty() {
                return Err(ExtractorError::EmptyGroundTruth);
            }
            let pairing = pair_minutiae(ground, detected, DEFAULT_DELTA_PX)?;
            let m = ground.len() as f64;
            let p = pairing.paired_count() as f64;
            let gi = goodness_index(ground, detected, &pairing)?;
            let ep = positional_error(ground, detected, &pairing)?;
            let et = orientation_error(ground, detected, &pairing)?;
            Ok((
                p / m,
                (m - p) / m,
                pairing.unpaired_detected.len() as f64 / m,
                gi,
                ep,
                et,
            ))
        })();
        match case {
            Ok((paired, missing, spurious, gi, ep, et)) => {
                let a = acc.entry(*condition).or_default();
                a.paired.push(paired);
                a.missing.push(missing);
                a.spurious.push(spurious);
                a.gi.push(gi);
                a.ep.push(ep);
                a.etheta.push(et);
            }
            Err(_) => excluded += 1,
        }
    }

    let by_condition = acc
        .into_iter()
        .map(|(cond, a)| {
            (
                cond,
                ConditionStats {
                    cases: a.gi.len(),
                    paired_ratio: MeanSd::from_values(&a.paired),
                    missing_ratio: MeanSd::from_values(&a.missing),
                    spurious_ratio: MeanSd::from_values(&a.spurious),
                    goodness_index: MeanSd::from_values(&a.gi),
                    positional_error_px: MeanSd::from_values(&a.ep),
                    orientation_error_rad: MeanSd::from_values(&a.etheta),
                },
            )
        })
        .collect();

    ExtractorReport {
        by_condition,
        excluded,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Minutia;
    use approx::assert_abs_diff_eq;

    fn set(points: &[(f64, f64, f64)], w: u32, h: u32) -> MinutiaeSet {
        let minutiae = points
            .iter()
            .map(|&(x, y, t)| Minutia::new(x, y, t, None).unwrap())
            .collect();
        MinutiaeSet::new(minutiae, w, h, 500).unwrap()
    }

    #[test]
    fn angle_diff_eq4_branches() {
        assert_abs_diff_eq!(angle_diff(0.5, 0.2), 0.3, epsilon = 1e-12);
        assert_abs_diff_eq!(angle_diff(-3.0, 3.0), TAU - 6.0, epsilon = 1e-12);
        assert_abs_diff_eq!(angle_diff(3.0, -3.0), -(TAU - 6.0), epsilon = 1e-12);
        // boundary: pi maps to -pi end of the half-open range
        assert_abs_diff_eq!(angle_diff(PI, 0.0), -PI, epsilon = 1e-12);
    }

    #[test]
    fn identical_sets_pair_at_distance_zero() {
        let s = set(&[(10.0, 10.0, 0.0), (50.0, 60.0, 1.0), (90.0, 20.0, 2.0)], 128, 128);
        let p = pair_minutiae(&s, &s, DEFAULT_DELTA_PX).unwrap();
        assert_eq!(p.paired_count(), 3);
        assert!(p.pairs.iter().all(|pr| pr.distance == 0.0 && pr.ground == pr.detected));
        assert!(p.unpaired_ground.is_empty() && p.unpaired_detected.is_empty());
    }

    #[test]
    fn closest_candidate_wins() {
        let ground = set(&[(50.0, 50.0, 0.0)], 128, 128);
        let detected = set(&[(57.0, 50.0, 0.0), (53.0, 50.0, 0.0)], 128, 128);
        let p = pair_minutiae(&ground, &detected, DEFAULT_DELTA_PX).unwrap();
        assert_eq!(p.pairs.len(), 1);
        assert_eq!(p.pairs[0].detected, 1);
        assert_eq!(p.unpaired_detected, vec![0]);
    }

    #[test]
    fn beyond_delta_stays_unpaired() {
        let ground = set(&[(50.0, 50.0, 0.0)], 128, 128);
        let detected = set(&[(60.5, 50.0, 0.0)], 128, 128);
        let p = pair_minutiae(&ground, &detected, DEFAULT_DELTA_PX).unwrap();
        assert!(p.pairs.is_empty());
        assert_eq!(p.unpaired_ground, vec![0]);
        assert_eq!(p.unpaired_detected, vec![0]);
    }

    #[test]
    fn distance_tie_broken_by_orientation() {
        let ground = set(&[(50.0, 50.0, 0.1)], 128, 128);
        // both at distance 4; index 1 has the closer orientation
        let detected = set(&[(46.0, 50.0, 1.5), (54.0, 50.0, 0.2)], 128, 128);
        let p = pair_minutiae(&ground, &detected, DEFAULT_DELTA_PX).unwrap();
        assert_eq!(p.pairs[0].detected, 1);
    }

    #[test]
    fn pairing_rejects_dimension_mismatch() {
        let a = set(&[(1.0, 1.0, 0.0)], 100, 100);
        let b = set(&[(1.0, 1.0, 0.0)], 200, 100);
        assert_eq!(
            pair_minutiae(&a, &b, DEFAULT_DELTA_PX).unwrap_err(),
            ExtractorError::DimensionMismatch
        );
    }

    #[test]
    fn gi_perfect_detection() {
        let s = set(&[(10.0, 10.0, 0.0), (50.0, 60.0, 1.0)], 128, 128);
        let p = pair_minutiae(&s, &s, DEFAULT_DELTA_PX).unwrap();
        assert_abs_diff_eq!(goodness_index(&s, &s, &p).unwrap(), 1.0);
    }

    #[test]
    fn gi_empty_detected_is_minus_one() {
        let ground = set(&[(10.0, 10.0, 0.0), (50.0, 60.0, 1.0)], 128, 128);
        let empty = set(&[], 128, 128);
        let p = pair_minutiae(&ground, &empty, DEFAULT_DELTA_PX).unwrap();
        assert_abs_diff_eq!(goodness_index(&ground, &empty, &p).unwrap(), -1.0);
    }

    #[test]
    fn gi_clamps_spurious_at_twice_ground() {
        // single patch: M=2 paired perfectly, 10 spurious in the same patch
        let ground = set(&[(2.0, 2.0, 0.0), (12.0, 12.0, 0.0)], 16, 16);
        let mut pts: Vec<(f64, f64, f64)> = vec![(2.0, 2.0, 0.0), (12.0, 12.0, 0.0)];
        for i in 0..10 {
            pts.push((1.0 + i as f64 * 1.4, 14.0, 3.0));
        }
        let detected = set(&pts, 16, 16);
        let p = pair_minutiae(&ground, &detected, 1.0).unwrap();
        assert_eq!(p.paired_count(), 2);
        assert_abs_diff_eq!(goodness_index(&ground, &detected, &p).unwrap(), -1.0);
    }

    #[test]
    fn gi_rejects_empty_ground() {
        let empty = set(&[], 128, 128);
        let d = set(&[(5.0, 5.0, 0.0)], 128, 128);
        let p = pair_minutiae(&empty, &d, DEFAULT_DELTA_PX).unwrap();
        assert_eq!(
            goodness_index(&empty, &d, &p).unwrap_err(),
            ExtractorError::EmptyGroundTruth
        );
    }

    #[test]
    fn positional_error_hand_values() {
        let ground = set(&[(10.0, 10.0, 0.0), (50.0, 50.0, 0.0)], 128, 128);
        let detected = set(&[(10.0, 10.0, 0.0), (50.0, 52.0, 0.0)], 128, 128);
        let p = pair_minutiae(&ground, &detected, DEFAULT_DELTA_PX).unwrap();
        assert_abs_diff_eq!(
            positional_error(&ground, &detected, &p).unwrap(),
            2.0_f64.sqrt(),
            epsilon = 1e-12
        );

        let g1 = set(&[(10.0, 10.0, 0.0)], 128, 128);
        let d1 = set(&[(13.0, 14.0, 0.0)], 128, 128);
        let p1 = pair_minutiae(&g1, &d1, DEFAULT_DELTA_PX).unwrap();
        assert_abs_diff_eq!(positional_error(&g1, &d1, &p1).unwrap(), 5.0, epsilon = 1e-12);
    }

    #[test]
    fn orientation_error_hand_values() {
        let ground = set(&[(10.0, 10.0, 0.0), (50.0, 50.0, 1.0)], 128, 128);
        let detected = set(&[(10.0, 10.0, 0.0), (50.0, 50.0, 1.4)], 128, 128);
        let p = pair_minutiae(&ground, &detected, DEFAULT_DELTA_PX).unwrap();
        assert_abs_diff_eq!(
            orientation_error(&ground, &detected, &p).unwrap(),
            (0.16_f64 / 2.0).sqrt(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn errors_reject_empty_pairing() {
        let g = set(&[(10.0, 10.0, 0.0)], 128, 128);
        let d = set(&[], 128, 128);
        let p = pair_minutiae(&g, &d, DEFAULT_DELTA_PX).unwrap();
        assert_eq!(
            positional_error(&g, &d, &p).unwrap_err(),
            ExtractorError::EmptyPairing
        );
        assert_eq!(
            orientation_error(&g, &d, &p).unwrap_err(),
            ExtractorError::EmptyPairing
        );
    }

    #[test]
    fn report_single_perfect_case() {
        let s = set(&[(10.0, 10.0, 0.0), (50.0, 60.0, 1.0), (90.0, 20.0, 2.0)], 128, 128);
        let report = extractor_report(&[(s.clone(), s, CaptureCondition::WetFinger)]);
        let stats = &report.by_condition[&CaptureCondition::WetFinger];
        assert_abs_diff_eq!(stats.paired_ratio.mean, 1.0);
        assert_abs_diff_eq!(stats.goodness_index.mean, 1.0);
        assert_abs_diff_eq!(stats.positional_error_px.mean, 0.0);
        assert_eq!(report.excluded, 0);
    }

    #[test]
    fn report_counts_excluded_cases() {
        let g = set(&[(10.0, 10.0, 0.0)], 128, 128);
        let far = set(&[(100.0, 100.0, 0.0)], 128, 128);
        let report = extractor_report(&[
            (g.clone(), far, CaptureCondition::DryFinger),
            (g.clone(), g, CaptureCondition::DryFinger),
        ]);
        assert_eq!(report.excluded, 1);
        assert_eq!(report.by_condition[&CaptureCondition::DryFinger].cases, 1);
    }

    #[test]
    fn report_has_one_row_per_condition() {
        let s = set(&[(10.0, 10.0, 0.0)], 128, 128);
        let report = extractor_report(&[
            (s.clone(), s.clone(), CaptureCondition::DryFinger),
            (s.clone(), s.clone(), CaptureCondition::WetFinger),
            (s.clone(), s, CaptureCondition::DarkLighting),
        ]);
        assert_eq!(report.by_condition.len(), 3);
    }
}

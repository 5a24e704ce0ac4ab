//! Baseline minutiae matcher used as the default system under test.
//!
//! The matcher is deliberately simple and fully deterministic: local
//! rotation/translation-invariant descriptors propose correspondences, each
//! correspondence hypothesizes a rigid alignment, and the best greedy pairing
//! under that alignment is scored as `2 * pairs / (|A| + |B|)`.
//!
//! Alignment rotation is capped (`max_alignment_rotation`), modeling the
//! limited presentation-angle tolerance of deployed matchers: sets rotated
//! past the cap pair only near the alignment anchor and score progressively
//! lower.

use crate::extractor::angle_diff;
use crate::types::MinutiaeSet;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatcherConfig {
    /// Neighbors per local descriptor.
    pub neighbors: usize,
    /// Pairing distance tolerance after alignment, pixels.
    pub pair_distance_px: f64,
    /// Pairing orientation tolerance after alignment, radians.
    pub pair_angle_rad: f64,
    /// Number of top descriptor correspondences tried as alignments.
    pub max_hypotheses: usize,
    /// Alignment rotations are clamped into ±this angle, radians.
    pub max_alignment_rotation: f64,
}

impl Default for MatcherConfig {
    fn default() -> Self {
        Self {
            neighbors: 5,
            pair_distance_px: 12.0,
            pair_angle_rad: std::f64::consts::PI / 6.0,
            max_hypotheses: 20,
            max_alignment_rotation: 5f64.to_radians(),
        }
    }
}

/// Similarity in `[0, 1]` plus the alignment that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchScore {
    pub value: f64,
    pub matched_pairs: usize,
    /// Rotation of the winning alignment, radians.
    pub rotation: f64,
    /// Translation of the winning alignment, pixels.
    pub translation: (f64, f64),
}

impl MatchScore {
    fn zero() -> Self {
        Self {
            value: 0.0,
            matched_pairs: 0,
            rotation: 0.0,
            translation: (0.0, 0.0),
        }
    }
}

/// Per-neighbor invariant features: distance, relative angle of the neighbor
/// direction to the center orientation, and orientation difference.
type Descriptor = Vec<(f64, f64, f64)>;

fn build_descriptors(set: &MinutiaeSet, k: usize) -> Vec<Descriptor> {
    let ms = set.minutiae();
    ms.iter()
        .enumerate()
        .map(|(i, m)| {
            let mut neighbors: Vec<(f64, usize)> = ms
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(j, n)| (m.distance(n), j))
                .collect();
            neighbors.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            neighbors
                .iter()
                .take(k)
                .map(|&(d, j)| {
                    let n = &ms[j];
                    let bearing = (n.y - m.y).atan2(n.x - m.x);
                    (d, angle_diff(bearing, m.theta), angle_diff(n.theta, m.theta))
                })
                .collect()
        })
        .collect()
}

fn descriptor_cost(a: &Descriptor, b: &Descriptor, cfg: &MatcherConfig) -> f64 {
    let k = a.len().min(b.len());
    if k == 0 {
        // no neighborhood evidence either way
        return 0.0;
    }
    let mut cost = 0.0;
    for i in 0..k {
        let (da, ra, oa) = a[i];
        let (db, rb, ob) = b[i];
        cost += (da - db).abs() / cfg.pair_distance_px
            + angle_diff(ra, rb).abs() / cfg.pair_angle_rad
            + angle_diff(oa, ob).abs() / cfg.pair_angle_rad;
    }
    cost / k as f64
}

/// Greedy injective pairing of `a` (already transformed) against `b` under the
/// distance and orientation gates. Returns the pair count.
fn greedy_pairs(
    a: &[(f64, f64, f64)],
    b: &MinutiaeSet,
    cfg: &MatcherConfig,
) -> usize {
    let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
    for (i, &(ax, ay, at)) in a.iter().enumerate() {
        for (j, m) in b.minutiae().iter().enumerate() {
            let d = (ax - m.x).hypot(ay - m.y);
            if d <= cfg.pair_distance_px && angle_diff(at, m.theta).abs() <= cfg.pair_angle_rad {
                candidates.push((d, i, j));
            }
        }
    }
    candidates.sort_by(|x, y| {
        x.0.partial_cmp(&y.0)
            .unwrap()
            .then(x.1.cmp(&y.1))
            .then(x.2.cmp(&y.2))
    });
    let mut used_a = vec![false; a.len()];
    let mut used_b = vec![false; b.len()];
    let mut pairs = 0;
    for (_, i, j) in candidates {
        if !used_a[i] && !used_b[j] {
            used_a[i] = true;
            used_b[j] = true;
            pairs += 1;
        }
    }
    pairs
}

/// Score the best alignment transforming `a` onto `b`.
fn directed_best(a: &MinutiaeSet, b: &MinutiaeSet, cfg: &MatcherConfig) -> MatchScore {
    let desc_a = build_descriptors(a, cfg.neighbors);
    let desc_b = build_descriptors(b, cfg.neighbors);

    let mut ranked: Vec<(f64, usize, usize)> = Vec::with_capacity(a.len() * b.len());
    for (i, da) in desc_a.iter().enumerate() {
        for (j, db) in desc_b.iter().enumerate() {
            ranked.push((descriptor_cost(da, db, cfg), i, j));
        }
    }
    ranked.sort_by(|x, y| {
        x.0.partial_cmp(&y.0)
            .unwrap()
            .then(x.1.cmp(&y.1))
            .then(x.2.cmp(&y.2))
    });

    let denom = (a.len() + b.len()) as f64;
    let mut best = MatchScore::zero();
    for &(_, i, j) in ranked.iter().take(cfg.max_hypotheses) {
        let ma = &a.minutiae()[i];
        let mb = &b.minutiae()[j];
        let rotation = angle_diff(mb.theta, ma.theta)
            .clamp(-cfg.max_alignment_rotation, cfg.max_alignment_rotation);
        let (sin, cos) = rotation.sin_cos();
        let tx = mb.x - (ma.x * cos - ma.y * sin);
        let ty = mb.y - (ma.x * sin + ma.y * cos);
        let transformed: Vec<(f64, f64, f64)> = a
            .minutiae()
            .iter()
            .map(|m| {
                (
                    m.x * cos - m.y * sin + tx,
                    m.x * sin + m.y * cos + ty,
                    m.theta + rotation,
                )
            })
            .collect();
        let pairs = greedy_pairs(&transformed, b, cfg);
        let value = 2.0 * pairs as f64 / denom;
        if value > best.value {
            best = MatchScore {
                value,
                matched_pairs: pairs,
                rotation,
                translation: (tx, ty),
            };
        }
    }
    best
}

/// Match two minutiae sets with the default configuration.
pub fn match_sets(a: &MinutiaeSet, b: &MinutiaeSet) -> MatchScore {
    match_sets_with(a, b, &MatcherConfig::default())
}

/// Match two minutiae sets. Symmetric by construction: alignments are tried
/// in both directions and the better score wins. Degenerate inputs (either
/// set empty) score 0.
pub fn match_sets_with(a: &MinutiaeSet, b: &MinutiaeSet, cfg: &MatcherConfig) -> MatchScore {
    if a.is_empty() || b.is_empty() {
        return MatchScore::zero();
    }
    let forward = directed_best(a, b, cfg);
    let backward = directed_best(b, a, cfg);
    if backward.value > forward.value {
        // report the transform in a-to-b orientation
        MatchScore {
            value: backward.value,
            matched_pairs: backward.matched_pairs,
            rotation: -backward.rotation,
            translation: backward.translation,
        }
    } else {
        forward
    }
}

//! Minutiae-set perturbation operators used to probe matcher sensitivity.
//!
//! Every operator is pure given an explicit seeded generator; there is no
//! global RNG state. Zero-magnitude parameters short-circuit to the exact
//! identity.

use crate::types::{wrap_angle, Minutia, MinutiaeSet};
use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PerturbError {
    #[error("rotation of {0} degrees outside [-180, 180]")]
    DegreesOutOfRange(f64),
    #[error("occlusion side {side} exceeds both image dimensions {width}x{height}")]
    SideTooLarge { side: u32, width: u32, height: u32 },
    #[error("cannot remove {requested} minutiae from a set of {available}")]
    RemoveTooMany { requested: usize, available: usize },
    #[error("parameter {0} must be non-negative")]
    NegativeParameter(&'static str),
    #[error("thin-plate-spline system is singular")]
    SingularWarp,
}

/// Declarative description of one perturbation, serializable in run manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PerturbationSpec {
    Displace { sigma_xy: f64, sigma_theta: f64 },
    AddSpurious { count: usize },
    RemoveRandom { count: usize },
    OccludeBlock { side: u32 },
    RotateGlobal { degrees: f64 },
    NonlinearDistort { magnitude: f64 },
}

impl PerturbationSpec {
    pub fn apply<R: Rng>(&self, set: &MinutiaeSet, rng: &mut R) -> Result<MinutiaeSet, PerturbError> {
        match *self {
            PerturbationSpec::Displace { sigma_xy, sigma_theta } => {
                displace(set, sigma_xy, sigma_theta, rng)
            }
            PerturbationSpec::AddSpurious { count } => add_remove(set, count, 0, rng),
            PerturbationSpec::RemoveRandom { count } => add_remove(set, 0, count, rng),
            PerturbationSpec::OccludeBlock { side } => occlude_block(set, side, rng).map(|(s, _)| s),
            PerturbationSpec::RotateGlobal { degrees } => rotate_global(set, degrees),
            PerturbationSpec::NonlinearDistort { magnitude } => {
                nonlinear_distort(set, magnitude, rng)
            }
        }
    }

    /// Report label for the perturbation family.
    pub fn label(&self) -> String {
        match self {
            PerturbationSpec::Displace { sigma_xy, sigma_theta } => {
                format!("displace sxy={sigma_xy} stheta={sigma_theta}")
            }
            PerturbationSpec::AddSpurious { count } => format!("add {count}"),
            PerturbationSpec::RemoveRandom { count } => format!("remove {count}"),
            PerturbationSpec::OccludeBlock { side } => format!("occlude {side}x{side}"),
            PerturbationSpec::RotateGlobal { degrees } => format!("rotate {degrees}deg"),
            PerturbationSpec::NonlinearDistort { magnitude } => format!("distort {magnitude}px"),
        }
    }
}

/// Axis-aligned occlusion square, reported alongside the occluded set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OcclusionBox {
    pub x: f64,
    pub y: f64,
    pub side: u32,
}

impl OcclusionBox {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let s = f64::from(self.side);
        x >= self.x && x < self.x + s && y >= self.y && y < self.y + s
    }
}

/// Rotate every minutia about the image center, in the y-down pixel frame.
///
/// Orientations are incremented by the same angle and wrapped. Minutiae that
/// leave the image frame are retained; `out_of_bounds_indices` on the result
/// flags them.
pub fn rotate_global(set: &MinutiaeSet, degrees: f64) -> Result<MinutiaeSet, PerturbError> {
    if !(-180.0..=180.0).contains(&degrees) || degrees.is_nan() {
        return Err(PerturbError::DegreesOutOfRange(degrees));
    }
    if degrees == 0.0 {
        return Ok(set.clone());
    }
    let angle = degrees.to_radians();
    let (sin, cos) = angle.sin_cos();
    let cx = f64::from(set.width()) / 2.0;
    let cy = f64::from(set.height()) / 2.0;
    let minutiae = set
        .minutiae()
        .iter()
        .map(|m| {
            let (dx, dy) = (m.x - cx, m.y - cy);
            Minutia {
                x: cx + dx * cos - dy * sin,
                y: cy + dx * sin + dy * cos,
                theta: wrap_angle(m.theta + angle).expect("finite angle"),
                quality: m.quality,
            }
        })
        .collect();
    Ok(MinutiaeSet::relaxed(
        minutiae,
        set.width(),
        set.height(),
        set.resolution(),
    ))
}

/// Remove all minutiae inside a randomly placed square of the given side.
///
/// The top-left corner is uniform in `[0, width-side] x [0, height-side]`,
/// clamped to 0 when the side exceeds a dimension. One box per call.
pub fn occlude_block<R: Rng>(
    set: &MinutiaeSet,
    side: u32,
    rng: &mut R,
) -> Result<(MinutiaeSet, OcclusionBox), PerturbError> {
    if side > set.width().max(set.height()) {
        return Err(PerturbError::SideTooLarge {
            side,
            width: set.width(),
            height: set.height(),
        });
    }
    let max_x = (f64::from(set.width()) - f64::from(side)).max(0.0);
    let max_y = (f64::from(set.height()) - f64::from(side)).max(0.0);
    let bx = if max_x > 0.0 { rng.gen_range(0.0..=max_x) } else { 0.0 };
    let by = if max_y > 0.0 { rng.gen_range(0.0..=max_y) } else { 0.0 };
    let boxx = OcclusionBox { x: bx, y: by, side };
    let minutiae = set
        .minutiae()
        .iter()
        .filter(|m| !boxx.contains(m.x, m.y))
        .copied()
        .collect();
    Ok((
        MinutiaeSet::relaxed(minutiae, set.width(), set.height(), set.resolution()),
        boxx,
    ))
}

/// Add independent zero-mean Gaussian noise to each coordinate and
/// orientation. Positions are clamped to the image frame.
pub fn displace<R: Rng>(
    set: &MinutiaeSet,
    sigma_xy: f64,
    sigma_theta: f64,
    rng: &mut R,
) -> Result<MinutiaeSet, PerturbError> {
    if sigma_xy < 0.0 {
        return Err(PerturbError::NegativeParameter("sigma_xy"));
    }
    if sigma_theta < 0.0 {
        return Err(PerturbError::NegativeParameter("sigma_theta"));
    }
    if sigma_xy == 0.0 && sigma_theta == 0.0 {
        return Ok(set.clone());
    }
    let noise_xy = Normal::new(0.0, sigma_xy.max(f64::MIN_POSITIVE)).expect("valid sigma");
    let noise_theta = Normal::new(0.0, sigma_theta.max(f64::MIN_POSITIVE)).expect("valid sigma");
    let max_x = f64::from(set.width() - 1);
    let max_y = f64::from(set.height() - 1);
    let minutiae = set
        .minutiae()
        .iter()
        .map(|m| {
            let dx = if sigma_xy > 0.0 { noise_xy.sample(rng) } else { 0.0 };
            let dy = if sigma_xy > 0.0 { noise_xy.sample(rng) } else { 0.0 };
            let dt = if sigma_theta > 0.0 { noise_theta.sample(rng) } else { 0.0 };
            Minutia {
                x: (m.x + dx).clamp(0.0, max_x),
                y: (m.y + dy).clamp(0.0, max_y),
                theta: wrap_angle(m.theta + dt).expect("finite angle"),
                quality: m.quality,
            }
        })
        .collect();
    Ok(MinutiaeSet::relaxed(
        minutiae,
        set.width(),
        set.height(),
        set.resolution(),
    ))
}

/// Remove `n_remove` minutiae uniformly without replacement, then insert
/// `n_add` minutiae uniformly in the image with uniform orientation.
pub fn add_remove<R: Rng>(
    set: &MinutiaeSet,
    n_add: usize,
    n_remove: usize,
    rng: &mut R,
) -> Result<MinutiaeSet, PerturbError> {
    if n_remove > set.len() {
        return Err(PerturbError::RemoveTooMany {
            requested: n_remove,
            available: set.len(),
        });
    }
    if n_add == 0 && n_remove == 0 {
        return Ok(set.clone());
    }
    let mut minutiae: Vec<Minutia> = if n_remove > 0 {
        let mut removed = vec![false; set.len()];
        for i in sample(rng, set.len(), n_remove) {
            removed[i] = true;
        }
        set.minutiae()
            .iter()
            .enumerate()
            .filter(|(i, _)| !removed[*i])
            .map(|(_, m)| *m)
            .collect()
    } else {
        set.minutiae().to_vec()
    };
    for _ in 0..n_add {
        let x = rng.gen_range(0.0..f64::from(set.width()));
        let y = rng.gen_range(0.0..f64::from(set.height()));
        let theta = rng.gen_range(0.0..std::f64::consts::TAU);
        minutiae.push(Minutia {
            x,
            y,
            theta: wrap_angle(theta).expect("finite angle"),
            quality: None,
        });
    }
    Ok(MinutiaeSet::relaxed(
        minutiae,
        set.width(),
        set.height(),
        set.resolution(),
    ))
}

/// Thin-plate-spline warp fitted on a control grid.
struct TpsWarp {
    controls: Vec<(f64, f64)>,
    /// Per output dimension: kernel weights followed by affine [1, x, y] terms.
    coeffs: [Vec<f64>; 2],
}

fn tps_kernel(r2: f64) -> f64 {
    if r2 <= 0.0 {
        0.0
    } else {
        r2 * 0.5 * r2.ln() // r^2 ln r
    }
}

impl TpsWarp {
    /// Fit the interpolating warp mapping `controls` to `targets`.
    #[allow(clippy::needless_range_loop)]
    fn fit(controls: Vec<(f64, f64)>, targets: &[(f64, f64)]) -> Result<Self, PerturbError> {
        let n = controls.len();
        let dim = n + 3;
        let mut a = DMatrix::<f64>::zeros(dim, dim);
        for i in 0..n {
            for j in 0..n {
                let dx = controls[i].0 - controls[j].0;
                let dy = controls[i].1 - controls[j].1;
                a[(i, j)] = tps_kernel(dx * dx + dy * dy);
            }
            a[(i, n)] = 1.0;
            a[(i, n + 1)] = controls[i].0;
            a[(i, n + 2)] = controls[i].1;
            a[(n, i)] = 1.0;
            a[(n + 1, i)] = controls[i].0;
            a[(n + 2, i)] = controls[i].1;
        }
        let lu = a.lu();
        let mut coeffs: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
        for d in 0..2 {
            let mut rhs = DMatrix::<f64>::zeros(dim, 1);
            for i in 0..n {
                rhs[(i, 0)] = if d == 0 { targets[i].0 } else { targets[i].1 };
            }
            let sol = lu.solve(&rhs).ok_or(PerturbError::SingularWarp)?;
            coeffs[d] = sol.column(0).iter().copied().collect();
        }
        Ok(Self { controls, coeffs })
    }

    #[allow(clippy::needless_range_loop)]
    fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let n = self.controls.len();
        let mut out = [0.0f64; 2];
        for d in 0..2 {
            let c = &self.coeffs[d];
            let mut v = c[n] + c[n + 1] * x + c[n + 2] * y;
            for (i, &(cx, cy)) in self.controls.iter().enumerate() {
                let dx = x - cx;
                let dy = y - cy;
                v += c[i] * tps_kernel(dx * dx + dy * dy);
            }
            out[d] = v;
        }
        (out[0], out[1])
    }

    /// Jacobian at (x, y): d(fx, fy)/d(x, y).
    #[allow(clippy::needless_range_loop)]
    fn jacobian(&self, x: f64, y: f64) -> [[f64; 2]; 2] {
        let n = self.controls.len();
        let mut j = [[0.0f64; 2]; 2];
        for d in 0..2 {
            let c = &self.coeffs[d];
            let mut gx = c[n + 1];
            let mut gy = c[n + 2];
            for (i, &(cx, cy)) in self.controls.iter().enumerate() {
                let dx = x - cx;
                let dy = y - cy;
                let r2 = dx * dx + dy * dy;
                if r2 > 0.0 {
                    // d/dx [r^2 ln r] = (2 ln r + 1) dx = (ln r^2 + 1) dx
                    let g = r2.ln() + 1.0;
                    gx += c[i] * g * dx;
                    gy += c[i] * g * dy;
                }
            }
            j[d][0] = gx;
            j[d][1] = gy;
        }
        j
    }
}

/// Non-linear distortion via a thin-plate-spline warp on a 4x4 control grid.
///
/// Each control point is displaced by iid Gaussian noise with the given
/// standard deviation. Orientations are adjusted by the rotation component of
/// the local warp Jacobian.
pub fn nonlinear_distort<R: Rng>(
    set: &MinutiaeSet,
    magnitude: f64,
    rng: &mut R,
) -> Result<MinutiaeSet, PerturbError> {
    if magnitude < 0.0 {
        return Err(PerturbError::NegativeParameter("magnitude"));
    }
    if magnitude == 0.0 {
        return Ok(set.clone());
    }
    let noise = Normal::new(0.0, magnitude).expect("valid magnitude");
    let mut controls = Vec::with_capacity(16);
    let mut targets = Vec::with_capacity(16);
    for gy in 0..4 {
        for gx in 0..4 {
            let x = f64::from(set.width() - 1) * gx as f64 / 3.0;
            let y = f64::from(set.height() - 1) * gy as f64 / 3.0;
            controls.push((x, y));
            targets.push((x + noise.sample(rng), y + noise.sample(rng)));
        }
    }
    let warp = TpsWarp::fit(controls, &targets)?;
    let minutiae = set
        .minutiae()
        .iter()
        .map(|m| {
            let (x, y) = warp.apply(m.x, m.y);
            let j = warp.jacobian(m.x, m.y);
            let rotation = (j[1][0] - j[0][1]).atan2(j[0][0] + j[1][1]);
            Minutia {
                x,
                y,
                theta: wrap_angle(m.theta + rotation).expect("finite angle"),
                quality: m.quality,
            }
        })
        .collect();
    Ok(MinutiaeSet::relaxed(
        minutiae,
        set.width(),
        set.height(),
        set.resolution(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_2;

    fn sample_set(seed: u64, n: usize, w: u32, h: u32) -> MinutiaeSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let minutiae = (0..n)
            .map(|_| {
                Minutia::new(
                    rng.gen_range(0.0..f64::from(w)),
                    rng.gen_range(0.0..f64::from(h)),
                    rng.gen_range(0.0..std::f64::consts::TAU),
                    None,
                )
                .unwrap()
            })
            .collect();
        MinutiaeSet::new(minutiae, w, h, 500).unwrap()
    }

    #[test]
    fn rotate_zero_is_identity() {
        let s = sample_set(1, 20, 256, 256);
        assert_eq!(rotate_global(&s, 0.0).unwrap(), s);
    }

    #[test]
    fn rotate_quarter_turn_about_center() {
        let c = 128.0;
        let m = Minutia::new(c + 10.0, c, 0.0, None).unwrap();
        let s = MinutiaeSet::new(vec![m], 256, 256, 500).unwrap();
        let r = rotate_global(&s, 90.0).unwrap();
        let rm = &r.minutiae()[0];
        assert!((rm.x - c).abs() < 1e-9);
        assert!((rm.y - (c + 10.0)).abs() < 1e-9);
        assert!((rm.theta - FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn rotate_round_trip_recovers_original() {
        let s = sample_set(2, 30, 400, 400);
        let back = rotate_global(&rotate_global(&s, 20.0).unwrap(), -20.0).unwrap();
        for (a, b) in s.minutiae().iter().zip(back.minutiae()) {
            assert!((a.x - b.x).abs() < 1e-9);
            assert!((a.y - b.y).abs() < 1e-9);
            assert!((a.theta - b.theta).abs() < 1e-9);
        }
    }

    #[test]
    fn rotate_preserves_cardinality_and_distances() {
        let s = sample_set(3, 25, 300, 300);
        let r = rotate_global(&s, 37.0).unwrap();
        assert_eq!(r.len(), s.len());
        for i in 0..s.len() {
            for j in (i + 1)..s.len() {
                let d0 = s.minutiae()[i].distance(&s.minutiae()[j]);
                let d1 = r.minutiae()[i].distance(&r.minutiae()[j]);
                assert!((d0 - d1).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn rotate_rejects_out_of_range() {
        let s = sample_set(4, 5, 100, 100);
        assert!(rotate_global(&s, 181.0).is_err());
    }

    #[test]
    fn occlude_zero_side_is_identity() {
        let s = sample_set(5, 15, 256, 256);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (out, _) = occlude_block(&s, 0, &mut rng).unwrap();
        assert_eq!(out, s);
    }

    #[test]
    fn occlude_full_image_empties_set() {
        let s = sample_set(6, 15, 256, 256);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (out, b) = occlude_block(&s, 256, &mut rng).unwrap();
        assert!(out.is_empty());
        assert_eq!((b.x, b.y), (0.0, 0.0));
    }

    #[test]
    fn occlude_membership() {
        let m1 = Minutia::new(10.0, 10.0, 0.0, None).unwrap();
        let m2 = Minutia::new(100.0, 100.0, 0.0, None).unwrap();
        let s = MinutiaeSet::new(vec![m1, m2], 128, 128, 500).unwrap();
        let b = OcclusionBox { x: 0.0, y: 0.0, side: 50 };
        assert!(b.contains(10.0, 10.0));
        assert!(!b.contains(100.0, 100.0));
        let remaining: Vec<_> = s
            .minutiae()
            .iter()
            .filter(|m| !b.contains(m.x, m.y))
            .collect();
        assert_eq!(remaining.len(), 1);
        assert_eq!(remaining[0].x, 100.0);
    }

    #[test]
    fn occlude_only_removes_inside_returned_box() {
        let s = sample_set(7, 40, 256, 256);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (out, b) = occlude_block(&s, 64, &mut rng).unwrap();
        for m in out.minutiae() {
            assert!(!b.contains(m.x, m.y));
        }
        let removed = s.len() - out.len();
        let inside = s.minutiae().iter().filter(|m| b.contains(m.x, m.y)).count();
        assert_eq!(removed, inside);
    }

    #[test]
    fn displace_zero_sigma_is_identity() {
        let s = sample_set(8, 15, 256, 256);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(displace(&s, 0.0, 0.0, &mut rng).unwrap(), s);
    }

    #[test]
    fn displace_is_seed_deterministic() {
        let s = sample_set(9, 15, 256, 256);
        let a = displace(&s, 2.0, 0.1, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        let b = displace(&s, 2.0, 0.1, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn displace_mean_matches_half_normal() {
        // E|N(0, sigma)| = sigma * sqrt(2/pi)
        let s = sample_set(10, 10_000, 4000, 4000);
        let out = displace(&s, 2.0, 0.0, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let mean_dx: f64 = s
            .minutiae()
            .iter()
            .zip(out.minutiae())
            .map(|(a, b)| (a.x - b.x).abs())
            .sum::<f64>()
            / s.len() as f64;
        let expected = 2.0 * (2.0 / std::f64::consts::PI).sqrt();
        assert!(
            (mean_dx - expected).abs() / expected < 0.05,
            "mean {mean_dx} vs {expected}"
        );
    }

    #[test]
    fn add_remove_identity_and_cardinality() {
        let s = sample_set(11, 20, 256, 256);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(add_remove(&s, 0, 0, &mut rng).unwrap(), s);
        let out = add_remove(&s, 7, 4, &mut rng).unwrap();
        assert_eq!(out.len(), 20 + 7 - 4);
        let emptied = add_remove(&s, 0, 20, &mut rng).unwrap();
        assert!(emptied.is_empty());
        assert!(add_remove(&s, 0, 21, &mut rng).is_err());
    }

    #[test]
    fn distort_zero_magnitude_is_identity() {
        let s = sample_set(12, 15, 256, 256);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(nonlinear_distort(&s, 0.0, &mut rng).unwrap(), s);
    }

    #[test]
    fn distort_mean_displacement_grows_with_magnitude() {
        let s = sample_set(13, 30, 300, 300);
        let mut means = Vec::new();
        for &mag in &[1.0, 2.0, 4.0] {
            let mut total = 0.0;
            for seed in 0..100 {
                let out =
                    nonlinear_distort(&s, mag, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
                total += s
                    .minutiae()
                    .iter()
                    .zip(out.minutiae())
                    .map(|(a, b)| a.distance(b))
                    .sum::<f64>()
                    / s.len() as f64;
            }
            means.push(total / 100.0);
        }
        assert!(means[0] < means[1] && means[1] < means[2], "{means:?}");
    }

    #[test]
    fn distort_is_locally_continuous() {
        // two minutiae 1 px apart stay within 3 px at magnitude 2
        let m1 = Minutia::new(150.0, 150.0, 0.0, None).unwrap();
        let m2 = Minutia::new(151.0, 150.0, 0.0, None).unwrap();
        let s = MinutiaeSet::new(vec![m1, m2], 300, 300, 500).unwrap();
        for seed in 0..50 {
            let out = nonlinear_distort(&s, 2.0, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let d = out.minutiae()[0].distance(&out.minutiae()[1]);
            assert!(d <= 3.0, "seed {seed}: distance {d}");
        }
    }

    #[test]
    fn spec_apply_is_deterministic_per_seed() {
        let s = sample_set(14, 25, 256, 256);
        let specs = [
            PerturbationSpec::Displace { sigma_xy: 2.0, sigma_theta: 0.1 },
            PerturbationSpec::AddSpurious { count: 5 },
            PerturbationSpec::RemoveRandom { count: 5 },
            PerturbationSpec::OccludeBlock { side: 64 },
            PerturbationSpec::RotateGlobal { degrees: -15.0 },
            PerturbationSpec::NonlinearDistort { magnitude: 3.0 },
        ];
        for spec in &specs {
            let a = spec.apply(&s, &mut ChaCha8Rng::seed_from_u64(77)).unwrap();
            let b = spec.apply(&s, &mut ChaCha8Rng::seed_from_u64(77)).unwrap();
            assert_eq!(a, b, "{spec:?}");
        }
    }
}

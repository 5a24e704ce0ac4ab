//! Synthetic template and impression generators for demos and tests.

use crate::manifest::{derive_seed, EvalKind, RecordSpec, RunManifest};
use crate::perturb;
use crate::types::{CaptureCondition, GrayscaleImage, Minutia, MinutiaeSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::{PI, TAU};
use std::path::Path;

/// Random template with well-separated minutiae (min spacing 15 px).
pub fn random_template(seed: u64, n: usize, width: u32, height: u32) -> MinutiaeSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points: Vec<Minutia> = Vec::with_capacity(n);
    let mut attempts = 0;
    while points.len() < n && attempts < 100_000 {
        attempts += 1;
        let x = rng.gen_range(15.0..f64::from(width) - 15.0);
        let y = rng.gen_range(15.0..f64::from(height) - 15.0);
        if points.iter().any(|p| (p.x - x).hypot(p.y - y) < 15.0) {
            continue;
        }
        let theta = rng.gen_range(0.0..TAU);
        points.push(Minutia::new(x, y, theta, None).unwrap());
    }
    MinutiaeSet::new(points, width, height, 500).unwrap()
}

/// Sinusoidal ridge impression with optional additive noise, emulating a
/// degraded capture.
pub fn synthetic_impression(
    seed: u64,
    width: u32,
    height: u32,
    period: f64,
    phi: f64,
    noise_amplitude: f64,
) -> GrayscaleImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (ux, uy) = (phi.cos(), phi.sin());
    let mut pixels = Vec::with_capacity((width * height) as usize);
    for y in 0..height {
        for x in 0..width {
            let t = f64::from(x) * ux + f64::from(y) * uy;
            let mut v = 128.0 + 80.0 * (2.0 * PI * t / period).sin();
            if noise_amplitude > 0.0 {
                v += rng.gen_range(-noise_amplitude..noise_amplitude);
            }
            pixels.push(v.clamp(0.0, 255.0).round() as u8);
        }
    }
    GrayscaleImage::new(pixels, width, height, 500).unwrap()
}

/// Write a synthetic multi-finger template dataset for the black-box
/// evaluation: one normal impression plus one impression per adverse
/// condition for each finger, all derived deterministically from the seed.
pub fn write_blackbox_dataset(
    dir: &Path,
    fingers: usize,
    seed: u64,
) -> std::io::Result<RunManifest> {
    std::fs::create_dir_all(dir)?;
    let mut records = Vec::new();
    for f in 0..fingers {
        let base_seed = derive_seed(seed, &[f as u64]);
        let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
        let n = rng.gen_range(25..=40);
        let base = random_template(derive_seed(base_seed, &[1]), n, 400, 400);
        let finger_id = format!("f{f:03}");

        let normal_path = format!("{finger_id}_normal.tmpl");
        crate::formats::save_template(&base, &dir.join(&normal_path))
            .map_err(|e| std::io::Error::other(e.to_string()))?;
        records.push(record(&finger_id, "normal", CaptureCondition::Normal, &normal_path));

        for (c, condition) in CaptureCondition::ADVERSE.iter().enumerate() {
            let mut crng = ChaCha8Rng::seed_from_u64(derive_seed(base_seed, &[2, c as u64]));
            // capture degradation: jitter everywhere, plus condition-specific
            // structure loss for the harsher conditions
            let jittered = perturb::displace(&base, 2.0, 0.06, &mut crng).unwrap();
            let perturbed = match condition {
                CaptureCondition::WetFinger => {
                    perturb::occlude_block(&jittered, 96, &mut crng).unwrap().0
                }
                CaptureCondition::HighPressure => {
                    perturb::nonlinear_distort(&jittered, 3.0, &mut crng).unwrap()
                }
                CaptureCondition::DryFinger => {
                    let drop = jittered.len() / 5;
                    perturb::add_remove(&jittered, drop, drop, &mut crng).unwrap()
                }
                _ => jittered,
            };
            let name = format!("{finger_id}_{c}.tmpl");
            crate::formats::save_template(&perturbed, &dir.join(&name))
                .map_err(|e| std::io::Error::other(e.to_string()))?;
            records.push(record(&finger_id, &format!("adv{c}"), *condition, &name));
        }
    }
    Ok(RunManifest {
        kind: EvalKind::Blackbox,
        dataset_root: std::path::PathBuf::new(),
        records,
        perturbations: vec![],
        systems: vec![],
        seed,
        resolution_dpi: 500,
        trials_per_reference: 3,
        far: 0.001,
        impostor_cap: 5000,
    })
}

fn record(finger: &str, impression: &str, condition: CaptureCondition, template: &str) -> RecordSpec {
    RecordSpec {
        finger_id: finger.to_string(),
        impression_id: impression.to_string(),
        reader_id: "synthetic".to_string(),
        condition: Some(condition),
        condition_metadata: None,
        image: None,
        template: Some(std::path::PathBuf::from(template)),
        ground_truth: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_template_respects_spacing() {
        let s = random_template(5, 30, 400, 400);
        assert_eq!(s.len(), 30);
        for i in 0..s.len() {
            for j in (i + 1)..s.len() {
                assert!(s.minutiae()[i].distance(&s.minutiae()[j]) >= 15.0);
            }
        }
    }

    #[test]
    fn dataset_is_seed_deterministic() {
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let m1 = write_blackbox_dataset(d1.path(), 3, 9).unwrap();
        let m2 = write_blackbox_dataset(d2.path(), 3, 9).unwrap();
        assert_eq!(m1.records.len(), m2.records.len());
        for (a, b) in m1.records.iter().zip(&m2.records) {
            let ta = std::fs::read(d1.path().join(a.template.as_ref().unwrap())).unwrap();
            let tb = std::fs::read(d2.path().join(b.template.as_ref().unwrap())).unwrap();
            assert_eq!(ta, tb);
        }
    }
}

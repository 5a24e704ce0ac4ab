//! Acceptance gate: one test per criterion, each printing a PASS line once
//! its assertions hold. Run with `cargo test --test acceptance -- --nocapture`
//! to see the lines.

use fpeval::extractor::{
    angle_diff, goodness_index, orientation_error, pair_minutiae, positional_error,
    DEFAULT_DELTA_PX,
};
use fpeval::manifest::{EvalKind, LoadedManifest};
use fpeval::perturb::{self, PerturbationSpec};
use fpeval::quality;
use fpeval::stats::{two_sample_t, Band};
use fpeval::types::{GrayscaleImage, Minutia, MinutiaeSet};
use fpeval::uncertainty::run_uncertainty;
use fpeval::{formats, synth};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

fn random_set(rng: &mut impl Rng, n: usize, w: u32, h: u32) -> MinutiaeSet {
    let minutiae = (0..n)
        .map(|_| {
            Minutia::new(
                rng.gen_range(0.0..f64::from(w) - 1.0),
                rng.gen_range(0.0..f64::from(h) - 1.0),
                rng.gen_range(0.0..std::f64::consts::TAU),
                None,
            )
            .unwrap()
        })
        .collect();
    MinutiaeSet::new(minutiae, w, h, 500).unwrap()
}

#[test]
fn criterion_01_uncertainty_matches_independent_oracle() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xACCE01);
    for _ in 0..1000 {
        let m = rng.gen_range(1..=20);
        let n = rng.gen_range(1..=50);
        let min = rng.gen_range(-5.0..5.0);
        let max = min + rng.gen_range(0.1..10.0);
        let scores: Vec<Vec<f64>> = (0..m)
            .map(|_| {
                (0..n)
                    .map(|_| rng.gen_range(min - 1.0..max + 1.0))
                    .collect()
            })
            .collect();

        // independent direct transcription of the nine-step protocol
        let mut expected_per_ref = Vec::new();
        for list in &scores {
            let norm: Vec<f64> = list
                .iter()
                .map(|s| ((s - min) / (max - min)).clamp(0.0, 1.0))
                .collect();
            let count = norm.len() as f64;
            let mu = norm.iter().sum::<f64>() / count;
            let u = (norm.iter().map(|s| (mu - s).powi(2)).sum::<f64>() / count).sqrt();
            expected_per_ref.push((mu, u));
        }
        let expected_total = (expected_per_ref.iter().map(|(_, u)| u * u).sum::<f64>()
            / expected_per_ref.len() as f64)
            .sqrt();

        let refs: Vec<usize> = (0..m).collect();
        let report = run_uncertainty(&refs, &scores, |_, &s| Ok(s), (min, max)).unwrap();
        for (got, (mu, u)) in report.per_reference.iter().zip(&expected_per_ref) {
            assert!((got.mean - mu).abs() < 1e-12, "mean {} vs {}", got.mean, mu);
            assert!(
                (got.standard_uncertainty - u).abs() < 1e-12,
                "u {} vs {}",
                got.standard_uncertainty,
                u
            );
        }
        assert!((report.total - expected_total).abs() < 1e-12);
    }
    assert!(start.elapsed().as_secs() < 5, "took {:?}", start.elapsed());
    println!("criterion 1 PASS: uncertainty protocol matches independent oracle (1000 configs, 1e-12)");
}

#[test]
fn criterion_02_goodness_index_range_and_degenerate_cases() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xACCE02);
    for _ in 0..1000 {
        let ng = rng.gen_range(1..=40);
        let nd = rng.gen_range(0..=40);
        let ground = random_set(&mut rng, ng, 256, 256);
        let detected = random_set(&mut rng, nd, 256, 256);
        let pairing = pair_minutiae(&ground, &detected, DEFAULT_DELTA_PX).unwrap();
        let gi = goodness_index(&ground, &detected, &pairing).unwrap();
        assert!((-3.0..=1.0).contains(&gi), "GI {gi} out of range");

        let empty = MinutiaeSet::new(vec![], 256, 256, 500).unwrap();
        let p = pair_minutiae(&ground, &empty, DEFAULT_DELTA_PX).unwrap();
        assert_eq!(goodness_index(&ground, &empty, &p).unwrap(), -1.0);

        let p = pair_minutiae(&ground, &ground, DEFAULT_DELTA_PX).unwrap();
        assert_eq!(goodness_index(&ground, &ground, &p).unwrap(), 1.0);
    }
    assert!(start.elapsed().as_secs() < 10, "took {:?}", start.elapsed());
    println!("criterion 2 PASS: GI in [-3, 1]; empty detected = -1; identical sets = 1 (1000 fuzz pairs)");
}

/// Exhaustive maximum-cardinality injective matching under `delta`,
/// minimizing total distance among maximum matchings.
fn optimal_matching(ground: &MinutiaeSet, detected: &MinutiaeSet, delta: f64) -> (usize, f64) {
    fn recurse(
        gi: usize,
        used: &mut Vec<bool>,
        ground: &MinutiaeSet,
        detected: &MinutiaeSet,
        delta: f64,
    ) -> (usize, f64) {
        if gi == ground.len() {
            return (0, 0.0);
        }
        // skip this ground minutia
        let mut best = recurse(gi + 1, used, ground, detected, delta);
        for di in 0..detected.len() {
            if used[di] {
                continue;
            }
            let d = ground.minutiae()[gi].distance(&detected.minutiae()[di]);
            if d > delta {
                continue;
            }
            used[di] = true;
            let (pairs, total) = recurse(gi + 1, used, ground, detected, delta);
            used[di] = false;
            let candidate = (pairs + 1, total + d);
            if candidate.0 > best.0 || (candidate.0 == best.0 && candidate.1 < best.1) {
                best = candidate;
            }
        }
        best
    }
    let mut used = vec![false; detected.len()];
    recurse(0, &mut used, ground, detected, delta)
}

#[test]
fn criterion_03_pairing_contract_and_near_optimality() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xACCE03);

    // injectivity, boundedness, exact partition on general fuzz inputs
    for _ in 0..300 {
        let ng = rng.gen_range(0..=30);
        let nd = rng.gen_range(0..=30);
        let ground = random_set(&mut rng, ng, 200, 200);
        let detected = random_set(&mut rng, nd, 200, 200);
        let pairing = pair_minutiae(&ground, &detected, DEFAULT_DELTA_PX).unwrap();

        let mut seen_g = vec![false; ground.len()];
        let mut seen_d = vec![false; detected.len()];
        for p in &pairing.pairs {
            assert!(!seen_g[p.ground] && !seen_d[p.detected], "not injective");
            seen_g[p.ground] = true;
            seen_d[p.detected] = true;
            assert!(p.distance <= DEFAULT_DELTA_PX + 1e-12);
        }
        for &g in &pairing.unpaired_ground {
            assert!(!seen_g[g]);
            seen_g[g] = true;
        }
        for &d in &pairing.unpaired_detected {
            assert!(!seen_d[d]);
            seen_d[d] = true;
        }
        assert!(seen_g.iter().all(|&s| s) && seen_d.iter().all(|&s| s), "not a partition");
    }

    // near-optimality against the exhaustive oracle on small sets
    let mut good = 0usize;
    const TRIALS: usize = 500;
    for _ in 0..TRIALS {
        let ng = rng.gen_range(1..=6);
        let nd = rng.gen_range(1..=6);
        let ground = random_set(&mut rng, ng, 60, 60);
        let detected = random_set(&mut rng, nd, 60, 60);
        let pairing = pair_minutiae(&ground, &detected, DEFAULT_DELTA_PX).unwrap();
        let greedy_total: f64 = pairing.pairs.iter().map(|p| p.distance).sum();
        let (opt_pairs, opt_total) = optimal_matching(&ground, &detected, DEFAULT_DELTA_PX);
        if pairing.paired_count() == opt_pairs && greedy_total <= opt_total * 1.10 + 1e-9 {
            good += 1;
        }
    }
    assert!(
        good as f64 >= 0.95 * TRIALS as f64,
        "only {good}/{TRIALS} trials near-optimal"
    );
    println!("criterion 3 PASS: pairing injective/bounded/partitioning; {good}/{TRIALS} trials within 10% of exhaustive optimum");
}

#[test]
fn criterion_04_hand_values_for_localization_metrics() {
    let tau = std::f64::consts::TAU;
    assert!((angle_diff(-3.0, 3.0) - (tau - 6.0)).abs() < 1e-12);
    assert!((angle_diff(3.0, -3.0) + (tau - 6.0)).abs() < 1e-12);

    let ground = MinutiaeSet::new(
        vec![Minutia::new(10.0, 10.0, 0.0, None).unwrap()],
        64,
        64,
        500,
    )
    .unwrap();
    let detected = MinutiaeSet::new(
        vec![Minutia::new(13.0, 14.0, 0.0, None).unwrap()],
        64,
        64,
        500,
    )
    .unwrap();
    let pairing = pair_minutiae(&ground, &detected, DEFAULT_DELTA_PX).unwrap();
    let ep = positional_error(&ground, &detected, &pairing).unwrap();
    assert!((ep - 5.0).abs() < 1e-12);

    let ground2 = MinutiaeSet::new(
        vec![
            Minutia::new(10.0, 10.0, 0.0, None).unwrap(),
            Minutia::new(40.0, 40.0, 0.0, None).unwrap(),
        ],
        64,
        64,
        500,
    )
    .unwrap();
    let detected2 = MinutiaeSet::new(
        vec![
            Minutia::new(10.0, 10.0, 0.0, None).unwrap(),
            Minutia::new(40.0, 40.0, 0.4, None).unwrap(),
        ],
        64,
        64,
        500,
    )
    .unwrap();
    let pairing2 = pair_minutiae(&ground2, &detected2, DEFAULT_DELTA_PX).unwrap();
    let et = orientation_error(&ground2, &detected2, &pairing2).unwrap();
    assert!((et - 0.08f64.sqrt()).abs() < 1e-12);
    println!("criterion 4 PASS: e_p, angle-difference, and e_theta hand values match to 1e-12");
}

#[test]
fn criterion_05_perturbation_identities_and_determinism() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xACCE05);
    let set = random_set(&mut rng, 30, 256, 256);

    let zero_specs = [
        PerturbationSpec::Displace {
            sigma_xy: 0.0,
            sigma_theta: 0.0,
        },
        PerturbationSpec::AddSpurious { count: 0 },
        PerturbationSpec::RemoveRandom { count: 0 },
        PerturbationSpec::RotateGlobal { degrees: 0.0 },
        PerturbationSpec::NonlinearDistort { magnitude: 0.0 },
    ];
    for spec in &zero_specs {
        let mut r = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(spec.apply(&set, &mut r).unwrap(), set, "{:?} not identity", spec);
    }

    // rotate(d) then rotate(-d) returns to the start
    for &d in &[5.0, 37.5, 179.0] {
        let there = perturb::rotate_global(&set, d).unwrap();
        let back = perturb::rotate_global(&there, -d).unwrap();
        for (a, b) in set.minutiae().iter().zip(back.minutiae()) {
            assert!((a.x - b.x).abs() < 1e-9 && (a.y - b.y).abs() < 1e-9);
            assert!(angle_diff(a.theta, b.theta).abs() < 1e-9);
        }
    }

    // a full-image box removes every minutia
    let mut r = ChaCha8Rng::seed_from_u64(2);
    let (emptied, _) = perturb::occlude_block(&set, 256, &mut r).unwrap();
    assert!(emptied.is_empty());

    // equal seeds give byte-identical perturbed templates
    let all_specs = [
        PerturbationSpec::Displace {
            sigma_xy: 2.0,
            sigma_theta: 0.1,
        },
        PerturbationSpec::AddSpurious { count: 7 },
        PerturbationSpec::RemoveRandom { count: 5 },
        PerturbationSpec::OccludeBlock { side: 64 },
        PerturbationSpec::RotateGlobal { degrees: 15.0 },
        PerturbationSpec::NonlinearDistort { magnitude: 4.0 },
    ];
    for spec in &all_specs {
        let mut r1 = ChaCha8Rng::seed_from_u64(99);
        let mut r2 = ChaCha8Rng::seed_from_u64(99);
        let t1 = formats::render_template(&spec.apply(&set, &mut r1).unwrap());
        let t2 = formats::render_template(&spec.apply(&set, &mut r2).unwrap());
        assert_eq!(t1.into_bytes(), t2.into_bytes(), "{:?} not deterministic", spec);
    }
    println!("criterion 5 PASS: zero-magnitude identities, rotation inverse, full occlusion, seeded determinism");
}

#[test]
fn criterion_06_quality_metrics_on_synthetic_oracles() {
    let start = Instant::now();
    let grating = synth::synthetic_impression(1, 256, 256, 9.0, 0.0, 0.0);
    let (rf, estimates) = quality::ridge_frequency_detail(&grating);
    assert!(rf.value >= 0.95, "RF {}", rf.value);
    let within = estimates
        .iter()
        .filter(|(_, f)| (f - 1.0 / 9.0).abs() <= 0.1 / 9.0)
        .count();
    assert!(
        within as f64 >= 0.9 * estimates.len() as f64,
        "{within}/{} estimates within 10% of 1/9",
        estimates.len()
    );
    assert!(quality::ocl(&grating).value >= 0.9);

    let mut rng = ChaCha8Rng::seed_from_u64(0xACCE06);
    let noise_pixels: Vec<u8> = (0..256 * 256).map(|_| rng.gen()).collect();
    let noise = GrayscaleImage::new(noise_pixels, 256, 256, 500).unwrap();
    assert!(quality::ocl(&noise).value <= 0.3, "noise OCL {}", quality::ocl(&noise).value);

    for _ in 0..200 {
        let w = rng.gen_range(32..=96);
        let h = rng.gen_range(32..=96);
        let pixels: Vec<u8> = (0..w as usize * h as usize).map(|_| rng.gen()).collect();
        let img = GrayscaleImage::new(pixels, w, h, 500).unwrap();
        for metric in quality::QualityMetric::ALL {
            let v = quality::compute_metric(&img, metric).value;
            assert!((0.0..=1.0).contains(&v), "{metric:?} = {v}");
        }
    }
    assert!(start.elapsed().as_secs() < 30, "took {:?}", start.elapsed());
    println!("criterion 6 PASS: RF/OCL grating and noise oracles; all metrics bounded on 200 fuzz images");
}

#[test]
fn criterion_07_matcher_fnmr_trend_under_rotation_and_occlusion() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let mut records = Vec::new();
    for f in 0..100u64 {
        let n = 25 + (f as usize * 7) % 16; // 25..=40
        let set = synth::random_template(1000 + f, n, 400, 400);
        let name = format!("t{f:03}.tmpl");
        formats::save_template(&set, &dir.path().join(&name)).unwrap();
        records.push(fpeval::manifest::RecordSpec {
            finger_id: format!("f{f:03}"),
            impression_id: "0".into(),
            reader_id: "synthetic".into(),
            condition: None,
            condition_metadata: None,
            image: None,
            template: Some(name.into()),
            ground_truth: None,
        });
    }
    let manifest = fpeval::manifest::RunManifest {
        kind: EvalKind::Matcher,
        dataset_root: std::path::PathBuf::new(),
        records,
        perturbations: vec![],
        systems: vec![],
        seed: 7,
        resolution_dpi: 500,
        trials_per_reference: 2,
        far: 0.001,
        impostor_cap: 5000,
    };
    let loaded = LoadedManifest::from_manifest(manifest, dir.path().to_path_buf()).unwrap();
    let (report, _) = fpeval::runs::run_matcher_eval(&loaded).unwrap();
    let baseline = &report.per_system["baseline"];

    let row = |family: &str| -> Vec<f64> {
        baseline
            .fnmr_grid
            .iter()
            .find(|(f, _)| f == family)
            .unwrap()
            .1
            .iter()
            .map(|c| c.fnmr.expect("fnmr computed"))
            .collect()
    };
    let rotation = row("Global Rotation");
    let occlusion = row("Occlusion");

    for w in rotation.windows(2) {
        assert!(w[1] >= w[0] - 1e-12, "rotation FNMR not monotone: {rotation:?}");
    }
    assert!(
        rotation[3] - rotation[0] >= 0.2,
        "FNMR(20deg) - FNMR(5deg) = {} < 0.2",
        rotation[3] - rotation[0]
    );
    for w in occlusion.windows(2) {
        assert!(w[1] >= w[0] - 1e-12, "occlusion FNMR not monotone: {occlusion:?}");
    }
    assert!(
        occlusion[3] <= rotation[3] + 1e-12,
        "FNMR(256^2) = {} exceeds FNMR(20deg) = {}",
        occlusion[3],
        rotation[3]
    );
    assert!(start.elapsed().as_secs() < 120, "took {:?}", start.elapsed());
    println!(
        "criterion 7 PASS: rotation FNMR {:?} monotone with spread {:.3}; occlusion FNMR {:?} stays below",
        rotation,
        rotation[3] - rotation[0],
        occlusion
    );
}

#[test]
fn criterion_08_t_test_properties_and_banding() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xACCE08);
    for _ in 0..200 {
        let a: Vec<f64> = (0..rng.gen_range(2..30)).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let b: Vec<f64> = (0..rng.gen_range(2..30)).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let ab = two_sample_t(&a, &b).unwrap();
        let ba = two_sample_t(&b, &a).unwrap();
        assert!((ab.t + ba.t).abs() < 1e-9, "antisymmetry: {} vs {}", ab.t, ba.t);

        let c = rng.gen_range(-10.0..10.0);
        let a2: Vec<f64> = a.iter().map(|v| v + c).collect();
        let b2: Vec<f64> = b.iter().map(|v| v + c).collect();
        let shifted = two_sample_t(&a2, &b2).unwrap();
        assert!(
            (shifted.t - ab.t).abs() < 1e-6 * (1.0 + ab.t.abs()),
            "shift invariance: {} vs {}",
            shifted.t,
            ab.t
        );
    }

    let eps = 1e-9;
    assert_eq!(Band::from_t(1.658 - eps), Band::None);
    assert_eq!(Band::from_t(1.658 + eps), Band::Yellow);
    assert_eq!(Band::from_t(-(1.658 + eps)), Band::Yellow);
    assert_eq!(Band::from_t(5.0 - eps), Band::Yellow);
    assert_eq!(Band::from_t(5.0 + eps), Band::Orange);
    assert_eq!(Band::from_t(10.0 - eps), Band::Orange);
    assert_eq!(Band::from_t(10.0 + eps), Band::Red);
    assert_eq!(Band::from_t(2.45), Band::Yellow);
    println!("criterion 8 PASS: t antisymmetry, shift invariance, and band boundaries");
}

fn run_cli(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_fpeval"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn dir_contents(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut entries: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                std::fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    entries.sort();
    entries
}

#[test]
fn criterion_09_blackbox_run_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let gen = run_cli(&[
        "perturb",
        "--out",
        data.to_str().unwrap(),
        "--fingers",
        "20",
        "--seed",
        "7",
    ]);
    assert!(gen.status.success(), "{}", String::from_utf8_lossy(&gen.stderr));
    let manifest = data.join("manifest.json");

    for out in ["run1", "run2"] {
        let run = run_cli(&[
            "blackbox-eval",
            "--manifest",
            manifest.to_str().unwrap(),
            "--out",
            dir.path().join(out).to_str().unwrap(),
            "--seed",
            "7",
        ]);
        assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    }
    let first = dir_contents(&dir.path().join("run1"));
    let second = dir_contents(&dir.path().join("run2"));
    assert!(!first.is_empty());
    assert_eq!(first, second, "reports differ between identical runs");

    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("run1/report.json")).unwrap())
            .unwrap();
    let processed = report["processed_records"].as_u64().unwrap();
    let excluded = report["excluded_records"].as_u64().unwrap();
    assert_eq!(processed + excluded, 20 * 7, "counts do not reconcile");
    println!("criterion 9 PASS: blackbox-eval byte-identical across runs; {processed} processed + {excluded} excluded reconcile");
}

#[test]
fn criterion_10_adapter_protocol_and_failure_exit_code() {
    use fpeval::adapter::{AdapterError, ExternalSystem, SystemRole};
    use std::os::unix::fs::PermissionsExt;

    let dir = tempfile::tempdir().unwrap();
    let script = |name: &str, body: &str| -> std::path::PathBuf {
        let path = dir.path().join(name);
        std::fs::write(&path, format!("#!/bin/sh\n{body}\n")).unwrap();
        std::fs::set_permissions(&path, std::fs::Permissions::from_mode(0o755)).unwrap();
        path
    };
    let system = |exe: std::path::PathBuf, timeout: f64| ExternalSystem {
        name: "stub".into(),
        executable: exe,
        role: SystemRole::Matcher,
        score_min: 0.0,
        score_max: 1.0,
        timeout_secs: timeout,
    };
    let null = Path::new("/dev/null");

    let ok = system(script("ok.sh", "echo 0.75"), 5.0).match_external(null, null).unwrap();
    assert_eq!(ok.value, 0.75);
    assert!(!ok.clamped);
    assert!(matches!(
        system(script("garbage.sh", "echo not-a-number"), 5.0).match_external(null, null),
        Err(AdapterError::UnparseableOutput { .. })
    ));
    assert!(matches!(
        system(script("fail.sh", "exit 7"), 5.0).match_external(null, null),
        Err(AdapterError::NonZeroExit { status: 7, .. })
    ));
    assert!(matches!(
        system(script("slow.sh", "sleep 30"), 0.2).match_external(null, null),
        Err(AdapterError::Timeout { .. })
    ));

    // external matcher that fails on every perturbed (temp-dir) template:
    // genuine comparisons all fail, far exceeding the 10% tolerance
    let flaky = script(
        "flaky.sh",
        "case \"$2\" in\n*p_*) exit 1 ;;\n*) echo 0.5 ;;\nesac",
    );
    let data = dir.path().join("data");
    std::fs::create_dir(&data).unwrap();
    let mut records = Vec::new();
    for f in 0..6u64 {
        let set = synth::random_template(500 + f, 30, 400, 400);
        let name = format!("m{f}.tmpl");
        formats::save_template(&set, &data.join(&name)).unwrap();
        records.push(serde_json::json!({
            "finger_id": format!("f{f}"),
            "impression_id": "0",
            "template": name,
        }));
    }
    let manifest = serde_json::json!({
        "kind": "matcher",
        "records": records,
        "systems": [{
            "name": "flaky",
            "executable": flaky,
            "role": "matcher",
            "score_min": 0.0,
            "score_max": 1.0,
        }],
        "seed": 1,
        "trials_per_reference": 1,
    });
    let manifest_path = data.join("manifest.json");
    std::fs::write(&manifest_path, serde_json::to_vec_pretty(&manifest).unwrap()).unwrap();

    let run = run_cli(&[
        "matcher-eval",
        "--manifest",
        manifest_path.to_str().unwrap(),
        "--out",
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(
        run.status.code(),
        Some(3),
        "expected exit 3, got {:?}; stderr: {}",
        run.status.code(),
        String::from_utf8_lossy(&run.stderr)
    );
    println!("criterion 10 PASS: adapter outcomes exact; >10% external failures exit with code 3");
}

//! Manifest-driven evaluation runs: reader, extractor, matcher, and
//! black-box, each producing a serializable report plus labeled tables.
//!
//! Reports use `BTreeMap` keys and fixed row orders throughout so that a
//! fixed (manifest, dataset, seed) yields byte-identical output.

use crate::adapter::{ExternalSystem, SystemRole};
use crate::extractor::{self, ExtractorReport, DEFAULT_DELTA_PX};
use crate::formats;
use crate::manifest::{derive_seed, LoadedManifest, RecordSpec};
use crate::matcher;
use crate::perturb;
use crate::quality::{self, QualityMetric};
use crate::report::{fmt, fmt_pct, Table};
use crate::stats::{self, StatsError, TTestResult};
use crate::types::{CaptureCondition, MinutiaeSet};
use crate::uncertainty;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("record {index} ({finger}/{impression}): missing required {field}")]
    MissingField {
        index: usize,
        finger: String,
        impression: String,
        field: &'static str,
    },
    #[error("record {index}: {source}")]
    Load {
        index: usize,
        source: formats::IoError,
    },
    #[error("no records in manifest")]
    NoRecords,
    #[error("manifest declares no external system with role {role}")]
    NoSystems { role: &'static str },
    #[error("statistics: {0}")]
    Stats(#[from] StatsError),
    #[error("no impostor pairs available (need at least two distinct fingers)")]
    NoImpostors,
    #[error("writing temporary template: {0}")]
    TempIo(std::io::Error),
}

/// Perturbation-condition families for the reader and extractor uncertainty
/// grids, in report row order.
pub const CONDITION_FAMILIES: [(&str, [CaptureCondition; 2]); 3] = [
    (
        "Finger Moisture",
        [CaptureCondition::DryFinger, CaptureCondition::WetFinger],
    ),
    (
        "Contact Pressure",
        [CaptureCondition::LowPressure, CaptureCondition::HighPressure],
    ),
    (
        "Illumination",
        [
            CaptureCondition::BrightLighting,
            CaptureCondition::DarkLighting,
        ],
    ),
];

pub const OCCLUSION_SIDES: [u32; 4] = [32, 64, 128, 256];
pub const ROTATION_DEGREES: [f64; 4] = [5.0, 10.0, 15.0, 20.0];

/// Compact view of an `UncertaintyReport` for the summary grids.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UncertaintySummary {
    pub total: f64,
    pub references: usize,
    pub clamped: usize,
}

/// Run the uncertainty protocol over per-reference score lists that were
/// already gathered (the scorer just forwards the stored score).
fn summarize_uncertainty(
    score_lists: &[Vec<f64>],
    bounds: (f64, f64),
) -> Option<UncertaintySummary> {
    let lists: Vec<&Vec<f64>> = score_lists.iter().filter(|l| !l.is_empty()).collect();
    if lists.is_empty() {
        return None;
    }
    let refs: Vec<usize> = (0..lists.len()).collect();
    let perturbed: Vec<Vec<f64>> = lists.iter().map(|l| (*l).clone()).collect();
    let report = uncertainty::run_uncertainty(&refs, &perturbed, |_, &s| Ok(s), bounds).ok()?;
    Some(UncertaintySummary {
        total: report.total,
        references: report.references,
        clamped: report.clamped,
    })
}

fn record_field<'a, T>(
    record: &RecordSpec,
    index: usize,
    value: &'a Option<T>,
    field: &'static str,
) -> Result<&'a T, RunError> {
    value.as_ref().ok_or_else(|| RunError::MissingField {
        index,
        finger: record.finger_id.clone(),
        impression: record.impression_id.clone(),
        field,
    })
}

// ---------------------------------------------------------------------------
// Reader evaluation
// ---------------------------------------------------------------------------

/// reader -> metric -> condition label -> quality scores.
pub type DistributionGrid = BTreeMap<String, BTreeMap<String, BTreeMap<String, Vec<f64>>>>;
type FingerConditionGrid = BTreeMap<(String, String), BTreeMap<CaptureCondition, Vec<[f64; 3]>>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReaderEvalReport {
    /// reader -> metric -> condition label -> quality scores.
    pub distributions: DistributionGrid,
    /// reader -> metric -> pooled scores over every condition.
    pub pooled: BTreeMap<String, BTreeMap<String, Vec<f64>>>,
    /// reader -> metric -> adverse condition -> t test vs. the pooled
    /// distribution. Absent when either sample has fewer than two values.
    pub t_grid: BTreeMap<String, BTreeMap<String, BTreeMap<String, TTestResult>>>,
    /// metric -> reader -> family -> uncertainty of same-finger adverse
    /// impressions against the normal reference.
    pub uncertainty: BTreeMap<String, BTreeMap<String, BTreeMap<String, UncertaintySummary>>>,
    pub processed_records: usize,
    /// Records skipped for missing condition labels.
    pub excluded_records: usize,
    /// (reader, finger) groups dropped from uncertainty for lacking a normal
    /// impression.
    pub excluded_fingers: usize,
}

pub fn run_reader_eval(loaded: &LoadedManifest) -> Result<(ReaderEvalReport, Vec<Table>), RunError> {
    let records = &loaded.manifest.records;
    if records.is_empty() {
        return Err(RunError::NoRecords);
    }
    let dpi = loaded.manifest.resolution_dpi;

    struct Row {
        reader: String,
        finger: String,
        condition: CaptureCondition,
        values: [f64; 3],
    }

    let mut excluded_records = 0usize;
    let mut jobs: Vec<(usize, &RecordSpec, &PathBuf, CaptureCondition)> = Vec::new();
    for (index, record) in records.iter().enumerate() {
        let Some(condition) = record.condition else {
            eprintln!(
                "warning: record {index} ({}/{}) has no condition label; skipped",
                record.finger_id, record.impression_id
            );
            excluded_records += 1;
            continue;
        };
        let image = record_field(record, index, &record.image, "image path")?;
        jobs.push((index, record, image, condition));
    }

    let rows: Vec<Result<Row, RunError>> = jobs
        .par_iter()
        .map(|&(index, record, image, condition)| {
            let img = formats::load_image(image, dpi)
                .map_err(|source| RunError::Load { index, source })?;
            let values = [
                quality::goq(&img).value,
                quality::ridge_frequency(&img).value,
                quality::ocl(&img).value,
            ];
            Ok(Row {
                reader: record.reader_id.clone(),
                finger: record.finger_id.clone(),
                condition,
                values,
            })
        })
        .collect();
    let rows: Vec<Row> = rows.into_iter().collect::<Result<_, _>>()?;

    let mut distributions: DistributionGrid = BTreeMap::new();
    let mut pooled: BTreeMap<String, BTreeMap<String, Vec<f64>>> = BTreeMap::new();
    // (reader, finger) -> condition -> per-record metric triples
    let mut by_finger: FingerConditionGrid = BTreeMap::new();

    for row in &rows {
        for (mi, metric) in QualityMetric::ALL.iter().enumerate() {
            let v = row.values[mi];
            distributions
                .entry(row.reader.clone())
                .or_default()
                .entry(metric.label().to_string())
                .or_default()
                .entry(row.condition.label().to_string())
                .or_default()
                .push(v);
            pooled
                .entry(row.reader.clone())
                .or_default()
                .entry(metric.label().to_string())
                .or_default()
                .push(v);
        }
        by_finger
            .entry((row.reader.clone(), row.finger.clone()))
            .or_default()
            .entry(row.condition)
            .or_default()
            .push(row.values);
    }

    let mut t_grid: BTreeMap<String, BTreeMap<String, BTreeMap<String, TTestResult>>> =
        BTreeMap::new();
    for (reader, metrics) in &distributions {
        for (metric, by_condition) in metrics {
            let all = &pooled[reader][metric];
            for condition in CaptureCondition::ADVERSE {
                let Some(sample) = by_condition.get(condition.label()) else {
                    continue;
                };
                if let Ok(result) = stats::two_sample_t(sample, all) {
                    t_grid
                        .entry(reader.clone())
                        .or_default()
                        .entry(metric.clone())
                        .or_default()
                        .insert(condition.label().to_string(), result);
                }
            }
        }
    }

    let mut excluded_fingers = 0usize;
    let mut uncertainty_grid: BTreeMap<
        String,
        BTreeMap<String, BTreeMap<String, UncertaintySummary>>,
    > = BTreeMap::new();
    let readers: Vec<String> = distributions.keys().cloned().collect();
    for reader in &readers {
        let fingers: Vec<&(String, String)> = by_finger
            .keys()
            .filter(|(r, _)| r == reader)
            .collect();
        let without_normal = fingers
            .iter()
            .filter(|key| !by_finger[**key].contains_key(&CaptureCondition::Normal))
            .count();
        excluded_fingers += without_normal;
        for (mi, metric) in QualityMetric::ALL.iter().enumerate() {
            for (family, conditions) in CONDITION_FAMILIES {
                let score_lists: Vec<Vec<f64>> = fingers
                    .iter()
                    .filter(|key| by_finger[**key].contains_key(&CaptureCondition::Normal))
                    .map(|key| {
                        conditions
                            .iter()
                            .flat_map(|c| by_finger[*key].get(c).into_iter().flatten())
                            .map(|values| values[mi])
                            .collect()
                    })
                    .collect();
                if let Some(summary) = summarize_uncertainty(&score_lists, (0.0, 1.0)) {
                    uncertainty_grid
                        .entry(metric.label().to_string())
                        .or_default()
                        .entry(reader.clone())
                        .or_default()
                        .insert(family.to_string(), summary);
                }
            }
        }
    }

    let report = ReaderEvalReport {
        distributions,
        pooled,
        t_grid,
        uncertainty: uncertainty_grid,
        processed_records: rows.len(),
        excluded_records,
        excluded_fingers,
    };
    let tables = reader_tables(&report, &readers);
    Ok((report, tables))
}

fn reader_tables(report: &ReaderEvalReport, readers: &[String]) -> Vec<Table> {
    let metric_labels: Vec<&str> = QualityMetric::ALL.iter().map(|m| m.label()).collect();
    let mut columns = Vec::new();
    for reader in readers {
        for metric in &metric_labels {
            columns.push(format!("{reader} {metric}"));
        }
    }

    let mut t_table = Table::new("Reader t-tests vs pooled", "Condition", columns.clone());
    for condition in CaptureCondition::ADVERSE {
        let cells = readers
            .iter()
            .flat_map(|reader| {
                metric_labels.iter().map(move |metric| {
                    report
                        .t_grid
                        .get(reader)
                        .and_then(|m| m.get(*metric))
                        .and_then(|c| c.get(condition.label()))
                        .map(|r| format!("{:.3} ({})", r.t, r.band.label()))
                        .unwrap_or_else(|| "-".to_string())
                })
            })
            .collect();
        t_table.push_row(condition.label(), cells);
    }

    let mut u_table = Table::new("Reader uncertainty", "Perturbation family", columns);
    for (family, _) in CONDITION_FAMILIES {
        let cells = readers
            .iter()
            .flat_map(|reader| {
                metric_labels.iter().map(move |metric| {
                    report
                        .uncertainty
                        .get(*metric)
                        .and_then(|r| r.get(reader))
                        .and_then(|f| f.get(family))
                        .map(|s| fmt(s.total))
                        .unwrap_or_else(|| "-".to_string())
                })
            })
            .collect();
        u_table.push_row(family, cells);
    }

    vec![t_table, u_table]
}

// ---------------------------------------------------------------------------
// Extractor evaluation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemExtractorResult {
    pub stats: ExtractorReport,
    /// family -> GI-based uncertainty (GI rescaled onto [0, 1]).
    pub uncertainty: BTreeMap<String, UncertaintySummary>,
    pub attempted: usize,
    pub failures: usize,
    /// First few failure messages, for diagnostics.
    pub failure_messages: Vec<String>,
    pub excluded_fingers: usize,
}

impl SystemExtractorResult {
    pub fn failure_rate(&self) -> f64 {
        if self.attempted == 0 {
            0.0
        } else {
            self.failures as f64 / self.attempted as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractorEvalReport {
    pub per_system: BTreeMap<String, SystemExtractorResult>,
    pub processed_records: usize,
    pub excluded_records: usize,
}

impl ExtractorEvalReport {
    pub fn max_failure_rate(&self) -> f64 {
        self.per_system
            .values()
            .map(|s| s.failure_rate())
            .fold(0.0, f64::max)
    }
}

pub fn run_extractor_eval(
    loaded: &LoadedManifest,
) -> Result<(ExtractorEvalReport, Vec<Table>), RunError> {
    let records = &loaded.manifest.records;
    if records.is_empty() {
        return Err(RunError::NoRecords);
    }
    let extractors: Vec<&ExternalSystem> = loaded
        .manifest
        .systems
        .iter()
        .filter(|s| s.role == SystemRole::Extractor)
        .collect();
    if extractors.is_empty() {
        return Err(RunError::NoSystems { role: "extractor" });
    }

    let mut excluded_records = 0usize;
    struct Job<'a> {
        finger: &'a str,
        condition: CaptureCondition,
        image: &'a Path,
        ground: MinutiaeSet,
    }
    let mut jobs: Vec<Job> = Vec::new();
    for (index, record) in records.iter().enumerate() {
        let Some(condition) = record.condition else {
            eprintln!(
                "warning: record {index} ({}/{}) has no condition label; skipped",
                record.finger_id, record.impression_id
            );
            excluded_records += 1;
            continue;
        };
        let image = record_field(record, index, &record.image, "image path")?;
        let gt_path = record_field(record, index, &record.ground_truth, "ground-truth template")?;
        let ground = formats::load_template(gt_path)
            .map_err(|source| RunError::Load { index, source })?;
        jobs.push(Job {
            finger: &record.finger_id,
            condition,
            image,
            ground,
        });
    }

    let mut per_system = BTreeMap::new();
    for system in &extractors {
        let mut cases: Vec<(MinutiaeSet, MinutiaeSet, CaptureCondition)> = Vec::new();
        // (finger, condition, rescaled GI) for the uncertainty grid
        let mut gi_rows: Vec<(&str, CaptureCondition, f64)> = Vec::new();
        let mut failures = 0usize;
        let mut failure_messages = Vec::new();
        for job in &jobs {
            match system.extract_external(job.image) {
                Ok(detected) => {
                    if let Ok(pairing) =
                        extractor::pair_minutiae(&job.ground, &detected, DEFAULT_DELTA_PX)
                    {
                        if let Ok(gi) = extractor::goodness_index(&job.ground, &detected, &pairing)
                        {
                            gi_rows.push((
                                job.finger,
                                job.condition,
                                uncertainty::rescale_goodness_index(gi),
                            ));
                        }
                    }
                    cases.push((job.ground.clone(), detected, job.condition));
                }
                Err(e) => {
                    failures += 1;
                    if failure_messages.len() < 10 {
                        failure_messages.push(e.to_string());
                    }
                }
            }
        }

        let mut by_finger: BTreeMap<&str, BTreeMap<CaptureCondition, Vec<f64>>> = BTreeMap::new();
        for (finger, condition, gi) in &gi_rows {
            by_finger
                .entry(finger)
                .or_default()
                .entry(*condition)
                .or_default()
                .push(*gi);
        }
        let excluded_fingers = by_finger
            .values()
            .filter(|conds| !conds.contains_key(&CaptureCondition::Normal))
            .count();
        let mut uncertainty_grid = BTreeMap::new();
        for (family, conditions) in CONDITION_FAMILIES {
            let score_lists: Vec<Vec<f64>> = by_finger
                .values()
                .filter(|conds| conds.contains_key(&CaptureCondition::Normal))
                .map(|conds| {
                    conditions
                        .iter()
                        .flat_map(|c| conds.get(c).into_iter().flatten())
                        .copied()
                        .collect()
                })
                .collect();
            if let Some(summary) = summarize_uncertainty(&score_lists, (0.0, 1.0)) {
                uncertainty_grid.insert(family.to_string(), summary);
            }
        }

        per_system.insert(
            system.name.clone(),
            SystemExtractorResult {
                stats: extractor::extractor_report(&cases),
                uncertainty: uncertainty_grid,
                attempted: jobs.len(),
                failures,
                failure_messages,
                excluded_fingers,
            },
        );
    }

    let report = ExtractorEvalReport {
        per_system,
        processed_records: jobs.len(),
        excluded_records,
    };
    let tables = extractor_tables(&report);
    Ok((report, tables))
}

fn extractor_tables(report: &ExtractorEvalReport) -> Vec<Table> {
    let systems: Vec<&String> = report.per_system.keys().collect();
    let columns: Vec<String> = systems.iter().map(|s| s.to_string()).collect();

    type StatField = fn(&extractor::ConditionStats) -> extractor::MeanSd;
    let metric_rows: [(&str, StatField); 6] = [
        ("Paired ratio", |s| s.paired_ratio),
        ("Missing ratio", |s| s.missing_ratio),
        ("Spurious ratio", |s| s.spurious_ratio),
        ("Goodness Index", |s| s.goodness_index),
        ("Positional error (px)", |s| s.positional_error_px),
        ("Orientation error (rad)", |s| s.orientation_error_rad),
    ];

    let mut stats_table = Table::new("Extractor statistics", "Condition / Metric", columns.clone());
    for condition in CaptureCondition::ALL {
        let present = report
            .per_system
            .values()
            .any(|s| s.stats.by_condition.contains_key(&condition));
        if !present {
            continue;
        }
        for (name, get) in &metric_rows {
            let cells = systems
                .iter()
                .map(|sys| {
                    report.per_system[*sys]
                        .stats
                        .by_condition
                        .get(&condition)
                        .map(|cs| {
                            let ms = get(cs);
                            format!("{:.4} ({:.4})", ms.mean, ms.sd)
                        })
                        .unwrap_or_else(|| "-".to_string())
                })
                .collect();
            stats_table.push_row(format!("{} / {name}", condition.label()), cells);
        }
    }

    let mut u_table = Table::new("Extractor uncertainty", "Perturbation family", columns);
    for (family, _) in CONDITION_FAMILIES {
        let cells = systems
            .iter()
            .map(|sys| {
                report.per_system[*sys]
                    .uncertainty
                    .get(family)
                    .map(|s| fmt(s.total))
                    .unwrap_or_else(|| "-".to_string())
            })
            .collect();
        u_table.push_row(family, cells);
    }

    vec![stats_table, u_table]
}

// ---------------------------------------------------------------------------
// Matcher evaluation
// ---------------------------------------------------------------------------

/// One perturbation arm of the matcher evaluation grid.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Arm {
    Occlusion(u32),
    Rotation(f64),
}

impl Arm {
    fn all() -> Vec<Arm> {
        OCCLUSION_SIDES
            .iter()
            .map(|&s| Arm::Occlusion(s))
            .chain(ROTATION_DEGREES.iter().map(|&d| Arm::Rotation(d)))
            .collect()
    }

    fn family(&self) -> &'static str {
        match self {
            Arm::Occlusion(_) => "Occlusion",
            Arm::Rotation(_) => "Global Rotation",
        }
    }

    fn magnitude_label(&self) -> String {
        match self {
            Arm::Occlusion(side) => format!("{side}x{side} px"),
            Arm::Rotation(deg) => format!("{deg} deg"),
        }
    }

    fn key(&self) -> String {
        format!("{} {}", self.family(), self.magnitude_label())
    }

    fn apply(&self, set: &MinutiaeSet, rng: &mut impl Rng) -> Option<MinutiaeSet> {
        match *self {
            Arm::Occlusion(side) => perturb::occlude_block(set, side, rng).ok().map(|(s, _)| s),
            Arm::Rotation(deg) => {
                let signed = if rng.gen_bool(0.5) { deg } else { -deg };
                perturb::rotate_global(set, signed).ok()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FnmrCell {
    pub magnitude: String,
    pub fnmr: Option<f64>,
    pub genuine: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemMatcherResult {
    pub threshold: f64,
    pub achieved_far: f64,
    pub impostors: usize,
    /// Rows in fixed order: Occlusion then Global Rotation, 4 magnitudes each.
    pub fnmr_grid: Vec<(String, Vec<FnmrCell>)>,
    /// arm key -> genuine score distribution.
    pub genuine_distributions: BTreeMap<String, Vec<f64>>,
    pub uncertainty: BTreeMap<String, UncertaintySummary>,
    pub attempted: usize,
    pub failures: usize,
}

impl SystemMatcherResult {
    pub fn failure_rate(&self) -> f64 {
        if self.attempted == 0 {
            0.0
        } else {
            self.failures as f64 / self.attempted as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatcherEvalReport {
    pub per_system: BTreeMap<String, SystemMatcherResult>,
    pub processed_records: usize,
    pub excluded_records: usize,
    pub far: f64,
}

impl MatcherEvalReport {
    pub fn max_failure_rate(&self) -> f64 {
        self.per_system
            .values()
            .map(|s| s.failure_rate())
            .fold(0.0, f64::max)
    }
}

/// Baseline matcher plus any declared external matcher, scored through one
/// interface. Template paths are only touched for external systems.
enum Sut<'a> {
    Baseline,
    External(&'a ExternalSystem),
}

impl Sut<'_> {
    fn name(&self) -> String {
        match self {
            Sut::Baseline => "baseline".to_string(),
            Sut::External(s) => s.name.clone(),
        }
    }

    fn bounds(&self) -> (f64, f64) {
        match self {
            Sut::Baseline => (0.0, 1.0),
            Sut::External(s) => (s.score_min, s.score_max),
        }
    }

    fn score(
        &self,
        a: &MinutiaeSet,
        a_path: Option<&Path>,
        b: &MinutiaeSet,
        b_path: Option<&Path>,
    ) -> Result<f64, String> {
        match self {
            Sut::Baseline => Ok(matcher::match_sets(a, b).value),
            Sut::External(s) => {
                let (Some(pa), Some(pb)) = (a_path, b_path) else {
                    return Err("external matcher needs serialized templates".into());
                };
                s.match_external(pa, pb)
                    .map(|r| r.value)
                    .map_err(|e| e.to_string())
            }
        }
    }
}

fn suts(systems: &[ExternalSystem]) -> Vec<Sut<'_>> {
    std::iter::once(Sut::Baseline)
        .chain(
            systems
                .iter()
                .filter(|s| s.role == SystemRole::Matcher)
                .map(Sut::External),
        )
        .collect()
}

pub fn run_matcher_eval(
    loaded: &LoadedManifest,
) -> Result<(MatcherEvalReport, Vec<Table>), RunError> {
    let manifest = &loaded.manifest;
    if manifest.records.is_empty() {
        return Err(RunError::NoRecords);
    }
    let trials = manifest.trials_per_reference.max(1);
    let arms = Arm::all();
    let systems = suts(&manifest.systems);
    let has_external = systems.len() > 1;

    // Load every record's template (explicit template preferred, ground
    // truth accepted).
    let mut sets: Vec<(String, MinutiaeSet, PathBuf)> = Vec::new();
    for (index, record) in manifest.records.iter().enumerate() {
        let path = record
            .template
            .as_ref()
            .or(record.ground_truth.as_ref())
            .ok_or_else(|| RunError::MissingField {
                index,
                finger: record.finger_id.clone(),
                impression: record.impression_id.clone(),
                field: "template (or ground-truth template)",
            })?;
        let set =
            formats::load_template(path).map_err(|source| RunError::Load { index, source })?;
        sets.push((record.finger_id.clone(), set, path.clone()));
    }

    // Perturbed counterparts: records x arms x trials, deterministic per
    // (seed, record, arm, trial) regardless of evaluation order.
    let tmp = if has_external {
        Some(tempfile::tempdir().map_err(RunError::TempIo)?)
    } else {
        None
    };
    let mut excluded_trials = 0usize;
    #[allow(clippy::type_complexity)]
    let mut perturbed: Vec<Vec<Vec<Option<(MinutiaeSet, Option<PathBuf>)>>>> =
        Vec::with_capacity(sets.len());
    for (k, (_, set, _)) in sets.iter().enumerate() {
        let mut per_arm = Vec::with_capacity(arms.len());
        for (a, arm) in arms.iter().enumerate() {
            let mut per_trial = Vec::with_capacity(trials);
            for t in 0..trials {
                let seed = derive_seed(manifest.seed, &[k as u64, a as u64, t as u64]);
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                match arm.apply(set, &mut rng) {
                    Some(p) => {
                        let path = match &tmp {
                            Some(dir) => {
                                let path = dir.path().join(format!("p_{k}_{a}_{t}.tmpl"));
                                formats::save_template(&p, &path).map_err(|e| {
                                    RunError::TempIo(std::io::Error::other(e.to_string()))
                                })?;
                                Some(path)
                            }
                            None => None,
                        };
                        per_trial.push(Some((p, path)));
                    }
                    None => {
                        excluded_trials += 1;
                        per_trial.push(None);
                    }
                }
            }
            per_arm.push(per_trial);
        }
        perturbed.push(per_arm);
    }

    // Impostor pairs: cross-finger unperturbed comparisons in record order.
    let mut impostor_pairs: Vec<(usize, usize)> = Vec::new();
    'outer: for i in 0..sets.len() {
        for j in (i + 1)..sets.len() {
            if sets[i].0 != sets[j].0 {
                impostor_pairs.push((i, j));
                if impostor_pairs.len() >= manifest.impostor_cap {
                    break 'outer;
                }
            }
        }
    }
    if impostor_pairs.is_empty() {
        return Err(RunError::NoImpostors);
    }

    let mut per_system = BTreeMap::new();
    for sut in &systems {
        let mut failures = 0usize;
        let mut attempted = 0usize;

        let mut impostor_scores = Vec::with_capacity(impostor_pairs.len());
        for &(i, j) in &impostor_pairs {
            attempted += 1;
            match sut.score(&sets[i].1, Some(&sets[i].2), &sets[j].1, Some(&sets[j].2)) {
                Ok(s) => impostor_scores.push(s),
                Err(_) => failures += 1,
            }
        }
        if impostor_scores.is_empty() {
            return Err(RunError::NoImpostors);
        }
        let threshold = stats::threshold_at_far(&impostor_scores, manifest.far)?;
        let achieved_far = stats::far_at_threshold(&impostor_scores, threshold)?;

        // genuine scores per arm, and per (record, family) for uncertainty
        let mut genuine: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        let mut family_scores: BTreeMap<&'static str, Vec<Vec<f64>>> = BTreeMap::new();
        for family in ["Occlusion", "Global Rotation"] {
            family_scores.insert(family, vec![Vec::new(); sets.len()]);
        }
        for (k, (_, set, path)) in sets.iter().enumerate() {
            for (a, arm) in arms.iter().enumerate() {
                for trial in perturbed[k][a].iter().flatten() {
                    attempted += 1;
                    let (p, ppath) = trial;
                    match sut.score(set, Some(path), p, ppath.as_deref()) {
                        Ok(s) => {
                            genuine.entry(arm.key()).or_default().push(s);
                            family_scores.get_mut(arm.family()).unwrap()[k].push(s);
                        }
                        Err(_) => failures += 1,
                    }
                }
            }
        }

        let mut fnmr_grid = Vec::new();
        for family in ["Occlusion", "Global Rotation"] {
            let cells = arms
                .iter()
                .filter(|arm| arm.family() == family)
                .map(|arm| {
                    let scores = genuine.get(&arm.key()).map(Vec::as_slice).unwrap_or(&[]);
                    FnmrCell {
                        magnitude: arm.magnitude_label(),
                        fnmr: stats::fnmr_at_threshold(scores, threshold).ok(),
                        genuine: scores.len(),
                    }
                })
                .collect();
            fnmr_grid.push((family.to_string(), cells));
        }

        let mut uncertainty_grid = BTreeMap::new();
        for (family, lists) in &family_scores {
            if let Some(summary) = summarize_uncertainty(lists, sut.bounds()) {
                uncertainty_grid.insert(family.to_string(), summary);
            }
        }

        per_system.insert(
            sut.name(),
            SystemMatcherResult {
                threshold,
                achieved_far,
                impostors: impostor_scores.len(),
                fnmr_grid,
                genuine_distributions: genuine,
                uncertainty: uncertainty_grid,
                attempted,
                failures,
            },
        );
    }
    drop(tmp);
    let _ = excluded_trials;

    let report = MatcherEvalReport {
        per_system,
        processed_records: sets.len(),
        excluded_records: 0,
        far: manifest.far,
    };
    let tables = matcher_tables(&report);
    Ok((report, tables))
}

fn matcher_tables(report: &MatcherEvalReport) -> Vec<Table> {
    let systems: Vec<&String> = report.per_system.keys().collect();
    let mut tables = Vec::new();

    for (family, magnitudes) in [
        (
            "Occlusion",
            OCCLUSION_SIDES.iter().map(|s| format!("{s}x{s} px")).collect::<Vec<_>>(),
        ),
        (
            "Global Rotation",
            ROTATION_DEGREES.iter().map(|d| format!("{d} deg")).collect(),
        ),
    ] {
        let mut table = Table::new(
            format!("FNMR percent {family}"),
            "System",
            magnitudes.clone(),
        );
        for sys in &systems {
            let result = &report.per_system[*sys];
            let row = result
                .fnmr_grid
                .iter()
                .find(|(f, _)| f == family)
                .map(|(_, cells)| cells.as_slice())
                .unwrap_or(&[]);
            let cells = magnitudes
                .iter()
                .map(|mag| {
                    row.iter()
                        .find(|c| &c.magnitude == mag)
                        .and_then(|c| c.fnmr)
                        .map(fmt_pct)
                        .unwrap_or_else(|| "-".to_string())
                })
                .collect();
            table.push_row(sys.to_string(), cells);
        }
        tables.push(table);
    }

    let mut u_table = Table::new(
        "Matcher uncertainty",
        "Perturbation family",
        systems.iter().map(|s| s.to_string()).collect(),
    );
    for family in ["Occlusion", "Global Rotation"] {
        let cells = systems
            .iter()
            .map(|sys| {
                report.per_system[*sys]
                    .uncertainty
                    .get(family)
                    .map(|s| fmt(s.total))
                    .unwrap_or_else(|| "-".to_string())
            })
            .collect();
        u_table.push_row(family, cells);
    }
    tables.push(u_table);

    let mut op_table = Table::new(
        "Matcher operating points",
        "System",
        vec![
            "threshold".to_string(),
            "achieved FAR".to_string(),
            "impostors".to_string(),
        ],
    );
    for sys in &systems {
        let r = &report.per_system[*sys];
        op_table.push_row(
            sys.to_string(),
            vec![fmt(r.threshold), fmt(r.achieved_far), r.impostors.to_string()],
        );
    }
    tables.push(op_table);

    tables
}

// ---------------------------------------------------------------------------
// Black-box evaluation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionFnmr {
    pub fnmr: f64,
    pub genuine: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemBlackboxResult {
    pub threshold: f64,
    pub achieved_far: f64,
    pub impostors: usize,
    /// condition label -> FNMR over (normal, adverse) same-finger pairs.
    pub fnmr_by_condition: BTreeMap<String, ConditionFnmr>,
    pub attempted: usize,
    pub failures: usize,
}

impl SystemBlackboxResult {
    pub fn failure_rate(&self) -> f64 {
        if self.attempted == 0 {
            0.0
        } else {
            self.failures as f64 / self.attempted as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlackboxEvalReport {
    pub per_system: BTreeMap<String, SystemBlackboxResult>,
    pub processed_records: usize,
    pub excluded_records: usize,
    pub excluded_fingers: usize,
    pub far: f64,
}

impl BlackboxEvalReport {
    pub fn max_failure_rate(&self) -> f64 {
        self.per_system
            .values()
            .map(|s| s.failure_rate())
            .fold(0.0, f64::max)
    }
}

pub fn run_blackbox_eval(
    loaded: &LoadedManifest,
) -> Result<(BlackboxEvalReport, Vec<Table>), RunError> {
    let manifest = &loaded.manifest;
    if manifest.records.is_empty() {
        return Err(RunError::NoRecords);
    }
    let systems = suts(&manifest.systems);

    struct Loaded {
        finger: String,
        condition: CaptureCondition,
        set: MinutiaeSet,
        path: PathBuf,
    }
    let mut excluded_records = 0usize;
    let mut loaded_records: Vec<Loaded> = Vec::new();
    for (index, record) in manifest.records.iter().enumerate() {
        let Some(condition) = record.condition else {
            eprintln!(
                "warning: record {index} ({}/{}) has no condition label; skipped",
                record.finger_id, record.impression_id
            );
            excluded_records += 1;
            continue;
        };
        let path = record
            .template
            .as_ref()
            .or(record.ground_truth.as_ref())
            .ok_or_else(|| RunError::MissingField {
                index,
                finger: record.finger_id.clone(),
                impression: record.impression_id.clone(),
                field: "template (or ground-truth template)",
            })?;
        let set =
            formats::load_template(path).map_err(|source| RunError::Load { index, source })?;
        loaded_records.push(Loaded {
            finger: record.finger_id.clone(),
            condition,
            set,
            path: path.clone(),
        });
    }

    // Fingers lacking a normal impression contribute no genuine pairs.
    let mut by_finger: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, r) in loaded_records.iter().enumerate() {
        by_finger.entry(&r.finger).or_default().push(i);
    }
    let mut excluded_fingers = 0usize;
    let mut genuine_pairs: Vec<(CaptureCondition, usize, usize)> = Vec::new();
    let mut normal_indices: Vec<usize> = Vec::new();
    for indices in by_finger.values() {
        let normals: Vec<usize> = indices
            .iter()
            .copied()
            .filter(|&i| loaded_records[i].condition == CaptureCondition::Normal)
            .collect();
        if normals.is_empty() {
            excluded_fingers += 1;
            excluded_records += indices.len();
            continue;
        }
        normal_indices.extend(&normals);
        for &i in indices {
            let condition = loaded_records[i].condition;
            if condition == CaptureCondition::Normal {
                continue;
            }
            for &n in &normals {
                genuine_pairs.push((condition, n, i));
            }
        }
    }
    normal_indices.sort_unstable();

    let mut impostor_pairs: Vec<(usize, usize)> = Vec::new();
    'outer: for (a, &i) in normal_indices.iter().enumerate() {
        for &j in &normal_indices[(a + 1)..] {
            if loaded_records[i].finger != loaded_records[j].finger {
                impostor_pairs.push((i, j));
                if impostor_pairs.len() >= manifest.impostor_cap {
                    break 'outer;
                }
            }
        }
    }
    if impostor_pairs.is_empty() {
        return Err(RunError::NoImpostors);
    }

    let mut per_system = BTreeMap::new();
    for sut in &systems {
        let mut attempted = 0usize;
        let mut failures = 0usize;
        let score_pair = |i: usize, j: usize| -> Result<f64, String> {
            let (a, b) = (&loaded_records[i], &loaded_records[j]);
            sut.score(&a.set, Some(&a.path), &b.set, Some(&b.path))
        };

        let mut impostor_scores = Vec::with_capacity(impostor_pairs.len());
        for &(i, j) in &impostor_pairs {
            attempted += 1;
            match score_pair(i, j) {
                Ok(s) => impostor_scores.push(s),
                Err(_) => failures += 1,
            }
        }
        if impostor_scores.is_empty() {
            return Err(RunError::NoImpostors);
        }
        let threshold = stats::threshold_at_far(&impostor_scores, manifest.far)?;
        let achieved_far = stats::far_at_threshold(&impostor_scores, threshold)?;

        let mut genuine_by_condition: BTreeMap<CaptureCondition, Vec<f64>> = BTreeMap::new();
        for &(condition, n, i) in &genuine_pairs {
            attempted += 1;
            match score_pair(n, i) {
                Ok(s) => genuine_by_condition.entry(condition).or_default().push(s),
                Err(_) => failures += 1,
            }
        }

        let mut fnmr_by_condition = BTreeMap::new();
        for (condition, scores) in &genuine_by_condition {
            if let Ok(fnmr) = stats::fnmr_at_threshold(scores, threshold) {
                fnmr_by_condition.insert(
                    condition.label().to_string(),
                    ConditionFnmr {
                        fnmr,
                        genuine: scores.len(),
                    },
                );
            }
        }

        per_system.insert(
            sut.name(),
            SystemBlackboxResult {
                threshold,
                achieved_far,
                impostors: impostor_scores.len(),
                fnmr_by_condition,
                attempted,
                failures,
            },
        );
    }

    let report = BlackboxEvalReport {
        per_system,
        processed_records: manifest.records.len() - excluded_records,
        excluded_records,
        excluded_fingers,
        far: manifest.far,
    };
    let tables = blackbox_tables(&report);
    Ok((report, tables))
}

fn blackbox_tables(report: &BlackboxEvalReport) -> Vec<Table> {
    let systems: Vec<&String> = report.per_system.keys().collect();
    let mut table = Table::new(
        "Blackbox FNMR percent by condition",
        "Condition",
        systems.iter().map(|s| s.to_string()).collect(),
    );
    for condition in CaptureCondition::ADVERSE {
        let cells: Vec<String> = systems
            .iter()
            .map(|sys| {
                report.per_system[*sys]
                    .fnmr_by_condition
                    .get(condition.label())
                    .map(|c| fmt_pct(c.fnmr))
                    .unwrap_or_else(|| "-".to_string())
            })
            .collect();
        if cells.iter().all(|c| c == "-") {
            continue;
        }
        table.push_row(condition.label(), cells);
    }
    vec![table]
}

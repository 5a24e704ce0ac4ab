//! Run manifests: the JSON document describing one evaluation batch.
//!
//! Paths inside a manifest are resolved relative to the manifest's directory
//! joined with `dataset_root`. Every referenced path must exist at load time.

use crate::adapter::ExternalSystem;
use crate::perturb::PerturbationSpec;
use crate::types::{CaptureCondition, ConditionMetadata, DEFAULT_RESOLUTION_DPI};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("cannot read manifest {path}: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },
    #[error("cannot parse manifest {path}: {source}")]
    Parse {
        path: String,
        source: serde_json::Error,
    },
    #[error("record {index}: finger id must be non-empty")]
    EmptyFingerId { index: usize },
    #[error("record {index}: referenced path {path} does not exist")]
    MissingPath { index: usize, path: String },
    #[error("system {name}: {message}")]
    InvalidSystem { name: String, message: String },
    #[error("record {index}: {message}")]
    InvalidRecord { index: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalKind {
    Reader,
    Extractor,
    Matcher,
    Blackbox,
}

/// One dataset record: an impression of one finger under one condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordSpec {
    pub finger_id: String,
    pub impression_id: String,
    #[serde(default = "default_reader")]
    pub reader_id: String,
    #[serde(default)]
    pub condition: Option<CaptureCondition>,
    #[serde(default)]
    pub condition_metadata: Option<ConditionMetadata>,
    #[serde(default)]
    pub image: Option<PathBuf>,
    #[serde(default)]
    pub template: Option<PathBuf>,
    #[serde(default)]
    pub ground_truth: Option<PathBuf>,
}

fn default_reader() -> String {
    "reader".to_string()
}

fn default_dpi() -> u32 {
    DEFAULT_RESOLUTION_DPI
}

fn default_trials() -> usize {
    3
}

fn default_far() -> f64 {
    0.001
}

fn default_impostor_cap() -> usize {
    5000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub kind: EvalKind,
    #[serde(default)]
    pub dataset_root: PathBuf,
    pub records: Vec<RecordSpec>,
    #[serde(default)]
    pub perturbations: Vec<PerturbationSpec>,
    #[serde(default)]
    pub systems: Vec<ExternalSystem>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_dpi")]
    pub resolution_dpi: u32,
    /// Perturbed trials per reference and arm in the matcher evaluation.
    #[serde(default = "default_trials")]
    pub trials_per_reference: usize,
    /// Operating point for threshold selection.
    #[serde(default = "default_far")]
    pub far: f64,
    /// Upper bound on impostor comparisons, taken in deterministic order.
    #[serde(default = "default_impostor_cap")]
    pub impostor_cap: usize,
}

/// A manifest with all record paths resolved and verified.
#[derive(Debug, Clone)]
pub struct LoadedManifest {
    pub manifest: RunManifest,
    pub base_dir: PathBuf,
}

impl LoadedManifest {
    pub fn load(path: &Path) -> Result<Self, ManifestError> {
        let text = std::fs::read_to_string(path).map_err(|source| ManifestError::Read {
            path: path.display().to_string(),
            source,
        })?;
        let manifest: RunManifest =
            serde_json::from_str(&text).map_err(|source| ManifestError::Parse {
                path: path.display().to_string(),
                source,
            })?;
        let manifest_dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        Self::from_manifest(manifest, manifest_dir)
    }

    pub fn from_manifest(
        mut manifest: RunManifest,
        manifest_dir: PathBuf,
    ) -> Result<Self, ManifestError> {
        let base_dir = manifest_dir.join(&manifest.dataset_root);
        for (index, record) in manifest.records.iter_mut().enumerate() {
            if record.finger_id.is_empty() {
                return Err(ManifestError::EmptyFingerId { index });
            }
            if let Some(meta) = &record.condition_metadata {
                meta.validate()
                    .map_err(|e| ManifestError::InvalidRecord {
                        index,
                        message: e.to_string(),
                    })?;
            }
            for p in [&mut record.image, &mut record.template, &mut record.ground_truth]
                .into_iter()
                .flatten()
            {
                let resolved = if p.is_absolute() {
                    p.clone()
                } else {
                    base_dir.join(&p)
                };
                if !resolved.exists() {
                    return Err(ManifestError::MissingPath {
                        index,
                        path: resolved.display().to_string(),
                    });
                }
                *p = resolved;
            }
        }
        for system in &manifest.systems {
            system
                .validate()
                .map_err(|e| ManifestError::InvalidSystem {
                    name: system.name.clone(),
                    message: e.to_string(),
                })?;
            if !system.executable.exists() {
                return Err(ManifestError::InvalidSystem {
                    name: system.name.clone(),
                    message: format!("executable {} does not exist", system.executable.display()),
                });
            }
        }
        Ok(Self { manifest, base_dir })
    }
}

/// Derive a sub-seed from the global seed and a position, so perturbation
/// draws are independent of iteration order and worker count.
pub fn derive_seed(global: u64, parts: &[u64]) -> u64 {
    let mut state = global ^ 0x9e37_79b9_7f4a_7c15;
    for &p in parts {
        state = splitmix64(state.wrapping_add(p).wrapping_mul(0xbf58_476d_1ce4_e5b9));
    }
    splitmix64(state)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

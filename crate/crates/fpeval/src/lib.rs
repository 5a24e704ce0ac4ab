//! Evaluation toolkit for minutiae-based fingerprint recognition pipelines.
//!
//! The pipeline's three modules are evaluated in isolation and end to end:
//!
//! - reader: block-wise quality metrics (OCL, RF, GOQ) over impressions,
//!   compared across capture conditions with t-tests ([`quality`], [`stats`]);
//! - feature extractor: detected minutiae paired against ground truth, with
//!   the Goodness Index and localization errors ([`extractor`]);
//! - matcher: genuine/impostor score distributions under controlled
//!   perturbations of minutiae sets, FNMR at a fixed FAR ([`matcher`],
//!   [`perturb`], [`stats`]);
//! - all modules: Monte Carlo standard uncertainty of normalized scores under
//!   perturbation ([`uncertainty`]);
//! - full system: FNMR per adverse capture condition ([`runs`]).
//!
//! External extractors and matchers plug in through a subprocess adapter
//! ([`adapter`]); batch runs are driven by JSON manifests ([`manifest`],
//! [`runs`]) and emit deterministic CSV/JSON reports ([`report`]).

pub mod adapter;
pub mod extractor;
pub mod formats;
pub mod manifest;
pub mod matcher;
pub mod perturb;
pub mod quality;
pub mod report;
pub mod runs;
pub mod stats;
pub mod synth;
pub mod types;
pub mod uncertainty;

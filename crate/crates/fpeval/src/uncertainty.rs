//! Monte Carlo uncertainty of a module under perturbation.
//!
//! For each of `M` references, `N` perturbed counterparts are scored against
//! the reference; scores are min-max normalized to `[0, 1]`, the per-reference
//! standard uncertainty is the population RMS deviation about the mean, and
//! the total uncertainty aggregates per-reference values as a root mean
//! square. Lower is better: it means the module is less sensitive to the
//! perturbation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum UncertaintyError {
    #[error("normalization bounds must satisfy max > min, got [{min}, {max}]")]
    InvalidBounds { min: f64, max: f64 },
    #[error("score list is empty")]
    EmptyScores,
    #[error("reference {reference} has no perturbed counterparts")]
    NoPerturbations { reference: usize },
    #[error("scorer failed for reference {reference}, perturbation {perturbation}: {message}")]
    ScorerFailed {
        reference: usize,
        perturbation: usize,
        message: String,
    },
}

/// Mean and standard uncertainty for one reference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceUncertainty {
    pub mean: f64,
    pub standard_uncertainty: f64,
    pub perturbations: usize,
}

/// Aggregate uncertainty for one perturbation family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyReport {
    pub per_reference: Vec<ReferenceUncertainty>,
    pub total: f64,
    pub bounds: (f64, f64),
    /// Scores falling outside the declared bounds before clamping.
    pub clamped: usize,
    pub references: usize,
}

impl UncertaintyReport {
    /// Recompute the total from the stored per-reference values.
    pub fn recompute_total(&self) -> f64 {
        total_uncertainty(
            &self
                .per_reference
                .iter()
                .map(|r| r.standard_uncertainty)
                .collect::<Vec<_>>(),
        )
        .unwrap_or(0.0)
    }
}

/// Min-max normalize scores into `[0, 1]`, clamping out-of-range values.
///
/// Returns the normalized scores and how many were clamped. External systems
/// occasionally exceed their documented range, so clamping (with a count)
/// beats rejection.
pub fn normalize_scores(
    scores: &[f64],
    min: f64,
    max: f64,
) -> Result<(Vec<f64>, usize), UncertaintyError> {
    // the negated comparison also rejects NaN bounds
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    if !(max > min) || !min.is_finite() || !max.is_finite() {
        return Err(UncertaintyError::InvalidBounds { min, max });
    }
    let mut clamped = 0usize;
    let normalized = scores
        .iter()
        .map(|&s| {
            let v = (s - min) / (max - min);
            if !(0.0..=1.0).contains(&v) {
                clamped += 1;
            }
            v.clamp(0.0, 1.0)
        })
        .collect();
    Ok((normalized, clamped))
}

/// Population-style mean and RMS deviation (divide by N, not N-1).
pub fn standard_uncertainty(scores: &[f64]) -> Result<(f64, f64), UncertaintyError> {
    if scores.is_empty() {
        return Err(UncertaintyError::EmptyScores);
    }
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let u = (scores.iter().map(|s| (mean - s).powi(2)).sum::<f64>() / n).sqrt();
    Ok((mean, u))
}

/// Root mean square of the per-reference uncertainties.
pub fn total_uncertainty(u_list: &[f64]) -> Result<f64, UncertaintyError> {
    if u_list.is_empty() {
        return Err(UncertaintyError::EmptyScores);
    }
    let m = u_list.len() as f64;
    Ok((u_list.iter().map(|u| u * u).sum::<f64>() / m).sqrt())
}

/// Run the full uncertainty procedure over references and their perturbed
/// counterparts.
///
/// `scorer(k, n)` produces the raw evaluation score between reference `k` and
/// its `n`-th perturbation; a failure aborts the run identifying the pair.
pub fn run_uncertainty<R, P, F>(
    references: &[R],
    perturbed: &[Vec<P>],
    mut scorer: F,
    bounds: (f64, f64),
) -> Result<UncertaintyReport, UncertaintyError>
where
    F: FnMut(&R, &P) -> Result<f64, String>,
{
    assert_eq!(
        references.len(),
        perturbed.len(),
        "one perturbation list per reference"
    );
    let (min, max) = bounds;
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    if !(max > min) {
        return Err(UncertaintyError::InvalidBounds { min, max });
    }
    let mut per_reference = Vec::with_capacity(references.len());
    let mut clamped_total = 0usize;
    for (k, (reference, family)) in references.iter().zip(perturbed).enumerate() {
        if family.is_empty() {
            return Err(UncertaintyError::NoPerturbations { reference: k });
        }
        let mut raw = Vec::with_capacity(family.len());
        for (n, p) in family.iter().enumerate() {
            let s = scorer(reference, p).map_err(|message| UncertaintyError::ScorerFailed {
                reference: k,
                perturbation: n,
                message,
            })?;
            raw.push(s);
        }
        let (normalized, clamped) = normalize_scores(&raw, min, max)?;
        clamped_total += clamped;
        let (mean, u) = standard_uncertainty(&normalized)?;
        per_reference.push(ReferenceUncertainty {
            mean,
            standard_uncertainty: u,
            perturbations: family.len(),
        });
    }
    let total = total_uncertainty(
        &per_reference
            .iter()
            .map(|r| r.standard_uncertainty)
            .collect::<Vec<_>>(),
    )?;
    Ok(UncertaintyReport {
        references: per_reference.len(),
        per_reference,
        total,
        bounds,
        clamped: clamped_total,
    })
}

/// Affine map from the Goodness Index range `[-3, 1]` onto `[0, 1]`,
/// applied before normalization when GI is the module score.
pub fn rescale_goodness_index(gi: f64) -> f64 {
    (gi + 3.0) / 4.0
}

//! Heavy-tailed artifact scoring.
//!
//! AR residuals of clean EEG are close to Gaussian. Electrode pops, EMG and
//! EOG bursts leave a few residuals far out in the tail, where a Cauchy
//! density is orders of magnitude larger than the Gaussian one. The score
//! below compares the two likelihoods.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-sample log-likelihood ratio (in nats) that maps to a score of one half.
pub const EVIDENCE_PER_SAMPLE: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CauchyParams {
    /// Location of the peak.
    pub x0: f64,
    /// Scale (probable error); must be positive.
    pub gamma_c: f64,
}

impl CauchyParams {
    pub fn new(x0: f64, gamma_c: f64) -> Result<Self> {
        if gamma_c > 0.0 && gamma_c.is_finite() && x0.is_finite() {
            Ok(Self { x0, gamma_c })
        } else {
            Err(Error::Validation(format!("Cauchy scale must be positive, got {gamma_c}")))
        }
    }
}

pub fn cauchy_pdf(x: f64, params: CauchyParams) -> f64 {
    let z = (x - params.x0) / params.gamma_c;
    1.0 / (PI * params.gamma_c * (1.0 + z * z))
}

pub fn gaussian_pdf(x: f64, mean: f64, sigma: f64) -> f64 {
    let z = (x - mean) / sigma;
    (-0.5 * z * z).exp() / (sigma * (2.0 * PI).sqrt())
}

fn ln_cauchy(x: f64, p: CauchyParams) -> f64 {
    let z = (x - p.x0) / p.gamma_c;
    -(PI * p.gamma_c).ln() - (z * z).ln_1p()
}

fn ln_gaussian(x: f64, sigma: f64) -> f64 {
    let z = x / sigma;
    -0.5 * (2.0 * PI * sigma * sigma).ln() - 0.5 * z * z
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArtifactScore {
    /// Normalized evidence for the heavy-tailed model, in `[0, 1)`.
    pub score: f64,
    /// Summed log-likelihood ratio, Cauchy over Gaussian.
    pub log_ratio: f64,
    pub flagged: bool,
}

/// Scores `residuals` under `Cauchy(params)` against `Gaussian(0, sigma)`.
///
/// With `L` the summed log-likelihood ratio over `n` residuals, the score is
/// `max(L, 0) / (max(L, 0) + EVIDENCE_PER_SAMPLE * n)`, so Gaussian-looking
/// residuals score zero and a few extreme outliers push it toward one.
pub fn artifact_score(
    residuals: &[f64],
    params: CauchyParams,
    sigma: f64,
    threshold: f64,
) -> Result<ArtifactScore> {
    if residuals.is_empty() {
        return Err(Error::Validation("no residuals to score".into()));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::Validation(format!("sigma must be positive, got {sigma}")));
    }
    let log_ratio: f64 = residuals
        .iter()
        .map(|&r| ln_cauchy(r, params) - ln_gaussian(r, sigma))
        .sum();
    let evidence = log_ratio.max(0.0);
    let score = evidence / (evidence + EVIDENCE_PER_SAMPLE * residuals.len() as f64);
    Ok(ArtifactScore { score, log_ratio, flagged: score > threshold })
}

//! From fitted RT moments back to a diffusion.
//!
//! IG: `ν = sqrt(μ/σ²)`, `a = μν`, so that `a/ν = μ` and `a/ν³ = σ²`.
//! Gamma: `α = μ²/σ²`, `β = σ²/μ`; the start is the sum of two
//! Gamma(α, sqrt(β/2)) draws and the drift is `1/sqrt(β/2)`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diffusion::{self, DiffusionSpec, StartSpec, DEFAULT_DELTA};
use crate::distributions::{DistributionSpec, Family};
use crate::error::{Error, Result};
use crate::glmm::{self, FittedGlmm};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IgDiffusion {
    pub a: f64,
    pub drift: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CognitiveReconstruction {
    /// 1-based level.
    pub level_id: usize,
    pub response_label: String,
    pub family: Family,
    pub mean: f64,
    pub variance: f64,
    pub diffusion: DiffusionSpec,
    pub implied_marginal: DistributionSpec,
}

impl CognitiveReconstruction {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = self.to_json()?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }
}

fn check_moments(mu_hat: f64, sigma2_hat: f64) -> Result<()> {
    if !(mu_hat > 0.0 && mu_hat.is_finite() && sigma2_hat > 0.0 && sigma2_hat.is_finite()) {
        return Err(Error::domain(format!(
            "mean {mu_hat} and variance {sigma2_hat} must be positive and finite"
        )));
    }
    Ok(())
}

pub fn reconstruct_ig(mu_hat: f64, sigma2_hat: f64) -> Result<IgDiffusion> {
    check_moments(mu_hat, sigma2_hat)?;
    let drift = (mu_hat / sigma2_hat).sqrt();
    Ok(IgDiffusion {
        a: mu_hat * drift,
        drift,
    })
}

pub fn reconstruct_ig_spec(mu_hat: f64, sigma2_hat: f64, delta: f64) -> Result<DiffusionSpec> {
    let r = reconstruct_ig(mu_hat, sigma2_hat)?;
    DiffusionSpec::new(StartSpec::Fixed { a: r.a }, r.drift, delta)
}

pub fn reconstruct_gamma(mu_hat: f64, sigma2_hat: f64) -> Result<DiffusionSpec> {
    reconstruct_gamma_with_delta(mu_hat, sigma2_hat, DEFAULT_DELTA)
}

pub fn reconstruct_gamma_with_delta(
    mu_hat: f64,
    sigma2_hat: f64,
    delta: f64,
) -> Result<DiffusionSpec> {
    check_moments(mu_hat, sigma2_hat)?;
    let shape = mu_hat * mu_hat / sigma2_hat;
    let scale = sigma2_hat / mu_hat;
    diffusion::gamma_scheme_spec(shape, scale, delta)
}

/// Reconstruction for the marginal law of `level` (1-based) under `model`.
pub fn glmm_to_diffusion(
    model: &FittedGlmm,
    level: usize,
    delta: f64,
) -> Result<CognitiveReconstruction> {
    if !model.converged {
        return Err(Error::ReconstructionRefused(
            "the model did not converge; its moments are not estimates".into(),
        ));
    }
    let mean = glmm::marginal_mean(model, level)?;
    let variance = glmm::marginal_variance(model, level)?;
    let diffusion = match model.family {
        Family::InverseGaussian => reconstruct_ig_spec(mean, variance, delta)?,
        Family::Gamma => reconstruct_gamma_with_delta(mean, variance, delta)?,
    };
    Ok(CognitiveReconstruction {
        level_id: level,
        response_label: model.response.clone().unwrap_or_default(),
        family: model.family,
        mean,
        variance,
        diffusion,
        implied_marginal: DistributionSpec::from_moments(model.family, mean, variance)?,
    })
}

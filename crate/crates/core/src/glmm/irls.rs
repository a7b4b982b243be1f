use super::design::DesignMatrix;
use crate::distributions::Family;
use crate::error::{Error, Result};

/// Fixed-effects-only GLM fit (no random intercept).
#[derive(Debug, Clone, PartialEq)]
pub struct GlmFit {
    pub beta: Vec<f64>,
    /// Pearson estimate `Σ (y - μ)² / V(μ) / (N - p)`.
    pub dispersion: f64,
    pub iterations: usize,
}

/// Iteratively reweighted least squares under the log link. With indicator
/// rows the weighted normal equations are diagonal, one level at a time.
pub fn fit_fixed_effects(design: &DesignMatrix, y: &[f64], family: Family) -> Result<GlmFit> {
    if y.len() != design.len() || y.is_empty() {
        return Err(Error::Schema(
            "response vector does not match the design".into(),
        ));
    }
    let power = family.variance_power();
    let grand_mean = y.iter().sum::<f64>() / y.len() as f64;
    let mut beta = vec![grand_mean.ln(); design.level_count];
    let mut iterations = 0;
    for it in 1..=100 {
        iterations = it;
        let mut num = vec![0.0; design.level_count];
        let mut den = vec![0.0; design.level_count];
        for (t, &yt) in y.iter().enumerate() {
            let l = design.level[t];
            let eta = beta[l];
            let mu = eta.exp();
            // dmu/deta = mu, so w = mu^2 / V(mu) and z = eta + (y - mu)/mu
            let w = mu.powf(2.0 - power);
            num[l] += w * (eta + (yt - mu) / mu);
            den[l] += w;
        }
        let mut change: f64 = 0.0;
        for l in 0..design.level_count {
            if den[l] <= 0.0 {
                return Err(Error::DesignDeficiency { level: l + 1 });
            }
            let next = num[l] / den[l];
            change = change.max((next - beta[l]).abs());
            beta[l] = next;
        }
        if change < 1e-12 {
            break;
        }
    }
    let pearson: f64 = y
        .iter()
        .enumerate()
        .map(|(t, &yt)| {
            let mu = beta[design.level[t]].exp();
            (yt - mu).powi(2) / mu.powf(power)
        })
        .sum();
    let dof = y.len().saturating_sub(design.level_count).max(1) as f64;
    Ok(GlmFit {
        beta,
        dispersion: pearson / dof,
        iterations,
    })
}

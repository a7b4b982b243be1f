//! Inverse Gaussian and Gamma kernels under the GLM mean–variance law
//! `V(Y) = phi * E(Y)^lambda` (lambda = 3 for IG, lambda = 2 for Gamma).

use std::f64::consts::{PI, SQRT_2};
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use statrs::function::gamma::{digamma, gamma_lr, gamma_ur, ln_gamma};

use crate::error::{Error, Result};
use crate::rng;

/// Bracket width at which quantile root-finding stops.
pub const QUANTILE_TOL: f64 = 1e-12;

/// Relative variance below which a sample counts as degenerate.
pub const DISPERSION_UNDERFLOW: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    InverseGaussian,
    Gamma,
}

impl Family {
    /// Exponent of the mean in the variance law.
    pub fn variance_power(self) -> f64 {
        match self {
            Family::InverseGaussian => 3.0,
            Family::Gamma => 2.0,
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Family::InverseGaussian => f.write_str("inverse_gaussian"),
            Family::Gamma => f.write_str("gamma"),
        }
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ig" | "inverse_gaussian" | "inverse-gaussian" | "wald" => Ok(Family::InverseGaussian),
            "gamma" => Ok(Family::Gamma),
            other => Err(Error::Usage(format!(
                "unknown family `{other}` (expected ig or gamma)"
            ))),
        }
    }
}

/// Inverse Gaussian in GLM mean–dispersion form: variance = phi * mu^3.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IgParams {
    pub mu: f64,
    pub phi: f64,
}

impl IgParams {
    pub fn new(mu: f64, phi: f64) -> Result<Self> {
        if !(mu > 0.0 && mu.is_finite()) {
            return Err(Error::param(format!(
                "IG mean must be positive and finite, got {mu}"
            )));
        }
        if !(phi > 0.0 && phi.is_finite()) {
            return Err(Error::param(format!(
                "IG dispersion must be positive and finite, got {phi}"
            )));
        }
        Ok(Self { mu, phi })
    }

    /// Shape parameter `lambda = 1 / phi` of the classical parameterization.
    pub fn lambda(&self) -> f64 {
        1.0 / self.phi
    }
}

/// Gamma with shape and scale; dispersion is `1 / shape`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaParams {
    pub shape: f64,
    pub scale: f64,
}

impl GammaParams {
    pub fn new(shape: f64, scale: f64) -> Result<Self> {
        if !(shape > 0.0 && shape.is_finite()) {
            return Err(Error::param(format!(
                "Gamma shape must be positive and finite, got {shape}"
            )));
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::param(format!(
                "Gamma scale must be positive and finite, got {scale}"
            )));
        }
        Ok(Self { shape, scale })
    }

    /// Gamma with the given mean and GLM dispersion (shape = 1/phi).
    pub fn from_mean_dispersion(mean: f64, phi: f64) -> Result<Self> {
        if !(mean > 0.0 && phi > 0.0) {
            return Err(Error::param(format!(
                "Gamma mean {mean} and dispersion {phi} must be positive"
            )));
        }
        Self::new(1.0 / phi, mean * phi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum DistributionSpec {
    InverseGaussian(IgParams),
    Gamma(GammaParams),
}

impl DistributionSpec {
    pub fn ig(mu: f64, phi: f64) -> Result<Self> {
        IgParams::new(mu, phi).map(DistributionSpec::InverseGaussian)
    }

    pub fn gamma(shape: f64, scale: f64) -> Result<Self> {
        GammaParams::new(shape, scale).map(DistributionSpec::Gamma)
    }

    /// Builds a spec of `family` from GLM mean and dispersion.
    pub fn from_mean_dispersion(family: Family, mean: f64, phi: f64) -> Result<Self> {
        match family {
            Family::InverseGaussian => Self::ig(mean, phi),
            Family::Gamma => {
                GammaParams::from_mean_dispersion(mean, phi).map(DistributionSpec::Gamma)
            }
        }
    }

    /// Builds a spec of `family` matching the given mean and variance.
    pub fn from_moments(family: Family, mean: f64, variance: f64) -> Result<Self> {
        if !(mean > 0.0 && variance > 0.0) {
            return Err(Error::param(format!(
                "mean {mean} and variance {variance} must be positive"
            )));
        }
        match family {
            Family::InverseGaussian => Self::ig(mean, variance / mean.powi(3)),
            Family::Gamma => Self::gamma(mean * mean / variance, variance / mean),
        }
    }

    pub fn family(&self) -> Family {
        match self {
            DistributionSpec::InverseGaussian(_) => Family::InverseGaussian,
            DistributionSpec::Gamma(_) => Family::Gamma,
        }
    }

    /// GLM dispersion `phi` in `V = phi * mean^lambda`.
    pub fn dispersion(&self) -> f64 {
        match self {
            DistributionSpec::InverseGaussian(p) => p.phi,
            DistributionSpec::Gamma(p) => 1.0 / p.shape,
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            DistributionSpec::InverseGaussian(p) => IgParams::new(p.mu, p.phi).map(|_| ()),
            DistributionSpec::Gamma(p) => GammaParams::new(p.shape, p.scale).map(|_| ()),
        }
    }
}

impl fmt::Display for DistributionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DistributionSpec::InverseGaussian(p) => write!(f, "IG(mu={}, phi={})", p.mu, p.phi),
            DistributionSpec::Gamma(p) => write!(f, "Gamma(shape={}, scale={})", p.shape, p.scale),
        }
    }
}

pub(crate) fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

/// `ln(1 - Phi(z))`, accurate far into the upper tail.
pub(crate) fn ln_norm_sf(z: f64) -> f64 {
    if z < 30.0 {
        (0.5 * erfc(z / SQRT_2)).ln()
    } else {
        // Mills-ratio asymptotic series
        let z2 = z * z;
        let series = 1.0 - 1.0 / z2 + 3.0 / (z2 * z2) - 15.0 / (z2 * z2 * z2);
        -0.5 * z2 - z.ln() - 0.5 * (2.0 * PI).ln() + series.ln()
    }
}

/// Standard normal quantile.
pub fn norm_quantile(p: f64) -> Result<f64> {
    use statrs::distribution::{ContinuousCDF, Normal};
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::domain(format!("probability {p} outside (0, 1)")));
    }
    Ok(Normal::standard().inverse_cdf(p))
}

/// Log-density; `-inf` outside the support.
pub fn ln_pdf(spec: &DistributionSpec, y: f64) -> Result<f64> {
    spec.validate()?;
    if y < 0.0 || y.is_nan() {
        return Err(Error::domain(format!("density argument {y} is negative")));
    }
    match *spec {
        DistributionSpec::InverseGaussian(p) => {
            if y == 0.0 {
                return Ok(f64::NEG_INFINITY);
            }
            let d = y - p.mu;
            Ok(
                -0.5 * (2.0 * PI * p.phi * y.powi(3)).ln()
                    - d * d / (2.0 * p.phi * p.mu * p.mu * y),
            )
        }
        DistributionSpec::Gamma(p) => {
            if y == 0.0 {
                return if p.shape > 1.0 {
                    Ok(f64::NEG_INFINITY)
                } else if p.shape == 1.0 {
                    Ok(-p.scale.ln())
                } else {
                    Err(Error::domain(
                        "Gamma density is unbounded at 0 for shape < 1",
                    ))
                };
            }
            Ok((p.shape - 1.0) * y.ln() - y / p.scale - ln_gamma(p.shape) - p.shape * p.scale.ln())
        }
    }
}

pub fn pdf(spec: &DistributionSpec, y: f64) -> Result<f64> {
    ln_pdf(spec, y).map(f64::exp)
}

pub fn cdf(spec: &DistributionSpec, y: f64) -> Result<f64> {
    spec.validate()?;
    if y.is_nan() {
        return Err(Error::domain("cdf argument is NaN"));
    }
    if y <= 0.0 {
        return Ok(0.0);
    }
    if y == f64::INFINITY {
        return Ok(1.0);
    }
    let value = match *spec {
        DistributionSpec::InverseGaussian(p) if y > p.mu => 1.0 - ig_sf(p, y),
        DistributionSpec::InverseGaussian(p) => {
            let lambda = p.lambda();
            let s = (lambda / y).sqrt();
            let lower = norm_cdf(s * (y / p.mu - 1.0));
            let upper = (2.0 * lambda / p.mu + ln_norm_sf(s * (y / p.mu + 1.0))).exp();
            lower + upper
        }
        DistributionSpec::Gamma(p) => gamma_lr(p.shape, y / p.scale),
    };
    Ok(value.clamp(0.0, 1.0))
}

// Upper tail of the IG law, summed in the tail so that 1 - sf stays monotone.
fn ig_sf(p: IgParams, y: f64) -> f64 {
    let lambda = p.lambda();
    let s = (lambda / y).sqrt();
    let a = ln_norm_sf(s * (y / p.mu - 1.0)).exp();
    let b = (2.0 * lambda / p.mu + ln_norm_sf(s * (y / p.mu + 1.0))).exp();
    (a - b).max(0.0)
}

/// Upper-tail probability, computed directly where cancellation would bite.
pub fn sf(spec: &DistributionSpec, y: f64) -> Result<f64> {
    match *spec {
        DistributionSpec::Gamma(p) if y > 0.0 => {
            spec.validate()?;
            Ok(gamma_ur(p.shape, y / p.scale).clamp(0.0, 1.0))
        }
        DistributionSpec::InverseGaussian(p) if y > p.mu => {
            spec.validate()?;
            Ok(ig_sf(p, y).clamp(0.0, 1.0))
        }
        _ => cdf(spec, y).map(|c| 1.0 - c),
    }
}

/// Inverse CDF by safeguarded Newton iteration inside a shrinking bracket.
pub fn quantile(spec: &DistributionSpec, p: f64) -> Result<f64> {
    spec.validate()?;
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::domain(format!("probability {p} outside (0, 1)")));
    }
    let (mean, var) = moments(spec)?;
    let mut lo = 0.0_f64;
    let mut hi = mean + var.sqrt();
    while cdf(spec, hi)? < p {
        lo = hi;
        hi *= 2.0;
        if !hi.is_finite() {
            return Err(Error::domain(format!(
                "quantile {p} could not be bracketed"
            )));
        }
    }
    let mut x = 0.5 * (lo + hi);
    for _ in 0..400 {
        let f = cdf(spec, x)? - p;
        if f == 0.0 {
            return Ok(x);
        }
        if f < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        if hi - lo <= QUANTILE_TOL * hi.max(1.0) {
            break;
        }
        let dens = pdf(spec, x)?;
        let newton = x - f / dens;
        x = if dens > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
    }
    Ok(x)
}

/// `(mean, variance)` under the GLM variance law.
pub fn moments(spec: &DistributionSpec) -> Result<(f64, f64)> {
    spec.validate()?;
    Ok(match *spec {
        DistributionSpec::InverseGaussian(p) => (p.mu, p.phi * p.mu.powi(3)),
        DistributionSpec::Gamma(p) => {
            let mean = p.shape * p.scale;
            (mean, mean * mean / p.shape)
        }
    })
}

/// One exact IG draw by the chi-square transformation with a uniform
/// acceptance branch between the two roots.
pub fn draw_ig<R: Rng + ?Sized>(params: &IgParams, rng: &mut R) -> f64 {
    let mu = params.mu;
    let v: f64 = rng.sample(StandardNormal);
    let r = mu * v * v / (2.0 * params.lambda());
    // smaller root mu*(1 + r - sqrt(r^2 + 2r)), written without cancellation
    let x = mu / (1.0 + r + (r * (r + 2.0)).sqrt());
    let u: f64 = rng.random();
    if u <= mu / (mu + x) {
        x
    } else {
        mu * mu / x
    }
}

pub fn draw_gamma<R: Rng + ?Sized>(params: &GammaParams, rng: &mut R) -> f64 {
    // parameters were validated at construction
    rand_distr::Gamma::new(params.shape, params.scale)
        .expect("validated gamma parameters")
        .sample(rng)
}

pub fn draw<R: Rng + ?Sized>(spec: &DistributionSpec, rng: &mut R) -> f64 {
    match spec {
        DistributionSpec::InverseGaussian(p) => draw_ig(p, rng),
        DistributionSpec::Gamma(p) => draw_gamma(p, rng),
    }
}

/// `n` independent draws, deterministic in `seed`.
pub fn sample(spec: &DistributionSpec, n: usize, seed: u64) -> Result<Vec<f64>> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::EmptySample);
    }
    let mut rng = rng::master(seed);
    Ok((0..n).map(|_| draw(spec, &mut rng)).collect())
}

/// Maximum-likelihood fit of `family` to a positive sample.
pub fn fit_marginal(sample: &[f64], family: Family) -> Result<DistributionSpec> {
    if sample.is_empty() {
        return Err(Error::EmptySample);
    }
    if sample.len() < 2 {
        return Err(Error::domain("fitting needs at least two observations"));
    }
    if let Some(bad) = sample.iter().find(|y| !(**y > 0.0 && y.is_finite())) {
        return Err(Error::domain(format!(
            "sample value {bad} is not a positive finite number"
        )));
    }
    let n = sample.len() as f64;
    let mean = sample.iter().sum::<f64>() / n;
    let variance = sample.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (n - 1.0);
    if variance < DISPERSION_UNDERFLOW * mean * mean {
        return Err(Error::DispersionUnderflow { mean, variance });
    }
    match family {
        Family::InverseGaussian => {
            let phi = sample.iter().map(|y| 1.0 / y - 1.0 / mean).sum::<f64>() / n;
            DistributionSpec::ig(mean, phi)
        }
        Family::Gamma => {
            let mean_log = sample.iter().map(|y| y.ln()).sum::<f64>() / n;
            let s = mean.ln() - mean_log;
            if !(s > 0.0) {
                return Err(Error::DispersionUnderflow { mean, variance });
            }
            let shape = solve_gamma_shape(s);
            DistributionSpec::gamma(shape, mean / shape)
        }
    }
}

/// Root of `ln k - digamma(k) = s`, bisected on `ln k`.
fn solve_gamma_shape(s: f64) -> f64 {
    let g = |k: f64| k.ln() - digamma(k) - s;
    // Minka's closed-form starting point, then widen to a bracket
    let k0 = (3.0 - s + ((s - 3.0).powi(2) + 24.0 * s).sqrt()) / (12.0 * s);
    let (mut lo, mut hi) = (k0.ln() - 1.0, k0.ln() + 1.0);
    while g(lo.exp()) < 0.0 {
        lo -= 1.0;
    }
    while g(hi.exp()) > 0.0 {
        hi += 1.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid.exp()) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    (0.5 * (lo + hi)).exp()
}

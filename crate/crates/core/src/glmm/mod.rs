//! Conditional GLMM with log link, cell-means fixed effects and one normal
//! random intercept per subject, fitted by maximum likelihood over
//! `(β, log τ², log φ)` with adaptive Gauss–Hermite quadrature.

mod design;
mod irls;
mod likelihood;
mod quadrature;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

pub use design::{build_design, DesignMatrix};
pub use irls::{fit_fixed_effects, GlmFit};
pub use likelihood::{marginal_loglik, GlmmParams, LikelihoodData};
pub use quadrature::GaussHermite;

use crate::distributions::{self, Family};
use crate::error::{Error, Result};
use crate::ingest::TrialDataset;
use crate::optim::{self, BfgsOptions};

pub const DEFAULT_NAGQ: usize = 15;

/// `log τ²` below this is reported as `τ² = 0`.
pub const LOG_TAU2_ZERO: f64 = -12.0;

/// Finite-difference step for the observed information.
pub const HESSIAN_STEP: f64 = 1e-5;

pub const DEFAULT_TAU2_INIT: f64 = 0.1;

/// Eigenvalues of the information below this fraction of the largest count as null.
const NULL_EIGEN_RATIO: f64 = 1e-10;

const LOG_TAU2_FLOOR: f64 = -40.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Link {
    Log,
}

/// How the error variance `σ² = ∫ V(Y|c) g(c) dc` is reported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorVarianceMode {
    /// Per level: `φ e^{2β+2τ²}` (Gamma) or `φ e^{3β+4.5τ²}` (IG).
    #[default]
    Exact,
    /// One pooled value, the mean of the per-level exact values.
    PaperCompatible,
}

impl fmt::Display for ErrorVarianceMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ErrorVarianceMode::Exact => "exact",
            ErrorVarianceMode::PaperCompatible => "paper_compatible",
        })
    }
}

impl FromStr for ErrorVarianceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(ErrorVarianceMode::Exact),
            "paper_compatible" | "paper-compatible" => Ok(ErrorVarianceMode::PaperCompatible),
            other => Err(Error::Usage(format!(
                "unknown error-variance mode `{other}` (expected exact or paper_compatible)"
            ))),
        }
    }
}

/// Per-level error variance under `mode`.
pub fn error_variances(
    family: Family,
    beta: &[f64],
    tau2: f64,
    dispersion: f64,
    mode: ErrorVarianceMode,
) -> Vec<f64> {
    let exact: Vec<f64> = beta
        .iter()
        .map(|b| match family {
            Family::Gamma => dispersion * (2.0 * b + 2.0 * tau2).exp(),
            Family::InverseGaussian => dispersion * (3.0 * b + 4.5 * tau2).exp(),
        })
        .collect();
    match mode {
        ErrorVarianceMode::Exact => exact,
        ErrorVarianceMode::PaperCompatible => {
            let pooled = exact.iter().sum::<f64>() / exact.len().max(1) as f64;
            vec![pooled; exact.len()]
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedGlmm {
    pub family: Family,
    pub link: Link,
    #[serde(default)]
    pub response: Option<String>,
    pub beta: Vec<f64>,
    pub tau2: f64,
    pub dispersion: f64,
    pub error_variance_mode: ErrorVarianceMode,
    pub error_variance: Vec<f64>,
    pub loglik: f64,
    pub aic: f64,
    /// Covariance of `(β, log τ², log φ)`, row-major.
    pub vcov: Vec<f64>,
    pub converged: bool,
    /// Per fixed effect: whether a Wald interval can be formed.
    pub ci_available: Vec<bool>,
    pub nagq: usize,
    pub seed: Option<u64>,
    #[serde(default)]
    pub subject_count: usize,
    #[serde(default)]
    pub n_obs: usize,
    #[serde(default)]
    pub iterations: usize,
    #[serde(default)]
    pub gradient_max: f64,
}

impl FittedGlmm {
    /// A model assembled from known parameters, with zero estimation
    /// uncertainty; used for what-if reconstructions and tests.
    pub fn from_parameters(
        family: Family,
        beta: Vec<f64>,
        tau2: f64,
        dispersion: f64,
        mode: ErrorVarianceMode,
    ) -> Result<Self> {
        if beta.is_empty() {
            return Err(Error::param("at least one fixed effect is required"));
        }
        if !(tau2 >= 0.0 && dispersion > 0.0) {
            return Err(Error::param(format!(
                "tau2 {tau2} must be >= 0 and dispersion {dispersion} > 0"
            )));
        }
        let n = beta.len();
        let p = n + 2;
        Ok(Self {
            family,
            link: Link::Log,
            response: None,
            error_variance: error_variances(family, &beta, tau2, dispersion, mode),
            beta,
            tau2,
            dispersion,
            error_variance_mode: mode,
            loglik: 0.0,
            aic: 2.0 * p as f64,
            vcov: vec![0.0; p * p],
            converged: true,
            ci_available: vec![true; n],
            nagq: DEFAULT_NAGQ,
            seed: None,
            subject_count: 0,
            n_obs: 0,
            iterations: 0,
            gradient_max: 0.0,
        })
    }

    pub fn level_count(&self) -> usize {
        self.beta.len()
    }

    /// Number of estimated parameters, `n + 2`.
    pub fn param_count(&self) -> usize {
        self.beta.len() + 2
    }

    pub fn vcov_entry(&self, i: usize, j: usize) -> f64 {
        self.vcov[i * self.param_count() + j]
    }

    pub fn vcov_matrix(&self) -> DMatrix<f64> {
        let p = self.param_count();
        DMatrix::from_row_slice(p, p, &self.vcov)
    }

    /// Standard error of `β_level` (1-based level).
    pub fn std_error(&self, level: usize) -> Result<f64> {
        let i = self.level_index(level)?;
        Ok(self.vcov_entry(i, i).max(0.0).sqrt())
    }

    pub(crate) fn level_index(&self, level: usize) -> Result<usize> {
        if level == 0 || level > self.beta.len() {
            return Err(Error::domain(format!(
                "level {level} outside 1..={}",
                self.beta.len()
            )));
        }
        Ok(level - 1)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: Self = serde_json::from_str(text)?;
        let p = model.param_count();
        if model.vcov.len() != p * p || model.ci_available.len() != model.beta.len() {
            return Err(Error::Schema(
                "model JSON has inconsistent dimensions".into(),
            ));
        }
        if model.error_variance.len() != model.beta.len() {
            return Err(Error::Schema(
                "model JSON has one error variance per level".into(),
            ));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = self.to_json()?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[derive(Debug, Clone)]
pub struct FitOptions {
    pub nagq: usize,
    pub error_variance_mode: ErrorVarianceMode,
    /// Starting point; defaults to the IRLS fit with `τ² = 0.1`.
    pub init: Option<GlmmParams>,
    pub max_iter: usize,
    pub grad_tol: f64,
    /// Largest remaining quasi-Newton step accepted as converged.
    pub step_tol: f64,
    /// Recorded in the fitted model for provenance only.
    pub seed: Option<u64>,
    pub response: Option<String>,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            nagq: DEFAULT_NAGQ,
            error_variance_mode: ErrorVarianceMode::Exact,
            init: None,
            max_iter: 1000,
            grad_tol: 1e-4,
            step_tol: 1e-6,
            seed: None,
            response: None,
        }
    }
}

/// Maximum-likelihood fit of the random-intercept GLMM to `dataset`.
pub fn fit(dataset: &TrialDataset, family: Family, options: &FitOptions) -> Result<FittedGlmm> {
    let design = build_design(dataset)?;
    let y = design.gather_rt(dataset);
    fit_design(&design, &y, family, options)
}

pub fn fit_design(
    design: &DesignMatrix,
    y: &[f64],
    family: Family,
    options: &FitOptions,
) -> Result<FittedGlmm> {
    if design.subject_count < 2 {
        return Err(Error::domain(format!(
            "a random-intercept fit needs at least two subjects, got {}",
            design.subject_count
        )));
    }
    if options.nagq == 0 {
        return Err(Error::param("nagq must be at least 1"));
    }
    let n = design.level_count;
    let data = LikelihoodData::new(design, y, family)?;
    let rule = GaussHermite::new(options.nagq);

    let init = match &options.init {
        Some(p) => p.clone(),
        None => {
            let glm = fit_fixed_effects(design, y, family)?;
            GlmmParams {
                beta: glm.beta,
                tau2: DEFAULT_TAU2_INIT,
                dispersion: glm.dispersion,
            }
        }
    };
    if init.beta.len() != n || !(init.tau2 > 0.0) || !(init.dispersion > 0.0) {
        return Err(Error::param(
            "initial values must have n fixed effects and positive tau2, dispersion",
        ));
    }
    let mut theta0 = init.beta.clone();
    theta0.push(init.tau2.ln());
    theta0.push(init.dispersion.ln());

    let unpack = |theta: &[f64]| GlmmParams {
        beta: theta[..n].to_vec(),
        tau2: theta[n].max(LOG_TAU2_FLOOR).exp(),
        dispersion: theta[n + 1].exp(),
    };
    let loglik = |theta: &[f64]| data.loglik(&unpack(theta), &rule).unwrap_or(f64::NAN);
    let objective = |theta: &[f64]| -loglik(theta);

    let opts = BfgsOptions {
        max_iter: options.max_iter,
        grad_tol: options.grad_tol,
        step_tol: options.step_tol,
        fd_step: HESSIAN_STEP,
        max_step: 2.0,
    };
    let min = optim::bfgs(objective, &theta0, &opts);
    let mut theta = min.x.clone();
    if theta[n] < LOG_TAU2_FLOOR {
        theta[n] = LOG_TAU2_FLOOR;
    }

    let info = -optim::hessian(&loglik, &theta, HESSIAN_STEP);
    let (vcov, available) = invert_information(&info, n);
    let finite = vcov.iter().all(|v| v.is_finite());

    let mut params = unpack(&theta);
    if theta[n] < LOG_TAU2_ZERO {
        params.tau2 = 0.0;
    }
    let ll = data.loglik(&params, &rule)?;
    let p = n + 2;
    let converged = min.converged && ll.is_finite() && finite;
    Ok(FittedGlmm {
        family,
        link: Link::Log,
        response: options.response.clone(),
        error_variance: error_variances(
            family,
            &params.beta,
            params.tau2,
            params.dispersion,
            options.error_variance_mode,
        ),
        beta: params.beta,
        tau2: params.tau2,
        dispersion: params.dispersion,
        error_variance_mode: options.error_variance_mode,
        loglik: ll,
        aic: -2.0 * ll + 2.0 * p as f64,
        vcov: if finite { vcov } else { vec![0.0; p * p] },
        converged,
        ci_available: available
            .into_iter()
            .map(|a| a && finite && converged)
            .collect(),
        nagq: options.nagq,
        seed: options.seed,
        subject_count: design.subject_count,
        n_obs: y.len(),
        iterations: min.iterations,
        gradient_max: min.grad_norm(),
    })
}

/// Pseudo-inverse of the observed information over its nonsingular subspace,
/// with per-fixed-effect flags marking coefficients that load on a null
/// direction.
fn invert_information(info: &DMatrix<f64>, n_beta: usize) -> (Vec<f64>, Vec<bool>) {
    let p = info.nrows();
    if info.iter().any(|v| !v.is_finite()) {
        return (vec![f64::NAN; p * p], vec![false; n_beta]);
    }
    let sym = (info + info.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let lmax = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let mut cov = DMatrix::<f64>::zeros(p, p);
    let mut null_load = vec![0.0; p];
    for (j, &lambda) in eig.eigenvalues.iter().enumerate() {
        let v = eig.eigenvectors.column(j);
        if lmax > 0.0 && lambda > NULL_EIGEN_RATIO * lmax {
            cov += (v * v.transpose()) / lambda;
        } else {
            for i in 0..p {
                null_load[i] += v[i] * v[i];
            }
        }
    }
    let mut out = vec![0.0; p * p];
    for i in 0..p {
        for j in 0..p {
            out[i * p + j] = 0.5 * (cov[(i, j)] + cov[(j, i)]);
        }
    }
    let available = (0..n_beta)
        .map(|i| null_load[i] < 1e-6 && out[i * p + i].is_finite() && out[i * p + i] >= 0.0)
        .collect();
    (out, available)
}

/// `μ_i = exp(β_i + τ²/2)`, the mean integrated over the random intercept.
pub fn marginal_mean(model: &FittedGlmm, level: usize) -> Result<f64> {
    let i = model.level_index(level)?;
    Ok((model.beta[i] + model.tau2 / 2.0).exp())
}

/// `σ_i² = σ² + exp(2β_i + 2τ²)(1 − exp(−τ²))`.
pub fn marginal_variance(model: &FittedGlmm, level: usize) -> Result<f64> {
    let i = model.level_index(level)?;
    let spread = (2.0 * model.beta[i] + 2.0 * model.tau2).exp() * -(-model.tau2).exp_m1();
    Ok(model.error_variance[i] + spread)
}

/// Wald interval `β_i ± z·se` on the log-mean scale; `None` when the
/// standard error is unavailable.
pub fn wald_ci(model: &FittedGlmm, level: usize, confidence: f64) -> Result<Option<(f64, f64)>> {
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(Error::domain(format!(
            "confidence {confidence} outside (0, 1)"
        )));
    }
    let i = model.level_index(level)?;
    if !model.converged {
        return Err(Error::Convergence(
            "Wald intervals need a converged model".into(),
        ));
    }
    if !model.ci_available[i] {
        return Ok(None);
    }
    let z = distributions::norm_quantile(0.5 + confidence / 2.0)?;
    let se = model.vcov_entry(i, i).sqrt();
    if !se.is_finite() {
        return Ok(None);
    }
    Ok(Some((model.beta[i] - z * se, model.beta[i] + z * se)))
}

/// `−2·loglik + 2·(n + 2)`.
pub fn aic(model: &FittedGlmm) -> f64 {
    -2.0 * model.loglik + 2.0 * model.param_count() as f64
}

//! One-barrier diffusion `X_t = X_0 - nu*t + W_t` absorbed at 0, simulated by
//! the Euler recursion `X_(t) = X_(t-1) - nu*delta + sqrt(delta)*eps_(t)`.
//!
//! With a fixed start `a` the exact hitting law is IG with mean `a/nu` and
//! variance `a/nu^3`. With a Gamma(2*alpha, s) start and drift `1/s`, where
//! `s = sqrt(beta/2)`, the hitting law is Gamma(alpha, beta).

use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distributions::{self, DistributionSpec, GammaParams};
use crate::error::{Error, Result};
use crate::rng;

/// Step size used by both simulation schemes unless overridden.
pub const DEFAULT_DELTA: f64 = 0.01;

/// Replicate count used by both simulation schemes unless overridden.
pub const DEFAULT_REPS: usize = 500;

/// Largest tolerated fraction of truncated replicates.
pub const MAX_TRUNCATED_FRACTION: f64 = 0.01;

/// Multiple of the expected step count allowed before a replicate is cut off.
const STEP_BUDGET_FACTOR: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StartSpec {
    Fixed {
        a: f64,
    },
    /// Sum of two independent Gamma(shape, scale) draws.
    GammaSum {
        shape: f64,
        scale: f64,
    },
}

impl StartSpec {
    pub fn mean(&self) -> f64 {
        match *self {
            StartSpec::Fixed { a } => a,
            StartSpec::GammaSum { shape, scale } => 2.0 * shape * scale,
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            StartSpec::Fixed { a } if a > 0.0 && a.is_finite() => Ok(()),
            StartSpec::Fixed { a } => Err(Error::param(format!(
                "start position must be positive, got {a}"
            ))),
            StartSpec::GammaSum { shape, scale } => GammaParams::new(shape, scale).map(|_| ()),
        }
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            StartSpec::Fixed { a } => a,
            // Gamma(k, s) + Gamma(k, s) is Gamma(2k, s)
            StartSpec::GammaSum { shape, scale } => distributions::draw_gamma(
                &GammaParams {
                    shape: 2.0 * shape,
                    scale,
                },
                rng,
            ),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiffusionSpec {
    pub start: StartSpec,
    pub drift: f64,
    /// Non-decision time; always 0 in this release.
    pub theta: f64,
    pub delta: f64,
    pub max_steps: u64,
}

impl DiffusionSpec {
    /// Builds a spec with the default absorption budget.
    pub fn new(start: StartSpec, drift: f64, delta: f64) -> Result<Self> {
        start.validate()?;
        if !(drift > 0.0 && drift.is_finite()) {
            return Err(Error::param(format!("drift must be positive, got {drift}")));
        }
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::param(format!(
                "step size must be positive, got {delta}"
            )));
        }
        let expected_steps = start.mean() / (drift * delta);
        let max_steps = (STEP_BUDGET_FACTOR * expected_steps).ceil().max(1.0) as u64;
        Ok(Self {
            start,
            drift,
            theta: 0.0,
            delta,
            max_steps,
        })
    }

    pub fn with_max_steps(mut self, max_steps: u64) -> Result<Self> {
        if max_steps == 0 {
            return Err(Error::param("max_steps must be at least 1"));
        }
        self.max_steps = max_steps;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        self.start.validate()?;
        if !(self.drift > 0.0 && self.drift.is_finite()) {
            return Err(Error::param(format!(
                "drift must be positive, got {}",
                self.drift
            )));
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::param(format!(
                "step size must be positive, got {}",
                self.delta
            )));
        }
        if self.max_steps == 0 {
            return Err(Error::param("max_steps must be at least 1"));
        }
        if self.theta != 0.0 {
            return Err(Error::param("non-decision time theta must be 0"));
        }
        Ok(())
    }

    /// Continuous-time hitting-time law implied by the spec.
    pub fn hitting_law(&self) -> Result<DistributionSpec> {
        match self.start {
            StartSpec::Fixed { a } => {
                let mean = a / self.drift;
                DistributionSpec::ig(mean, (a / self.drift.powi(3)) / mean.powi(3))
            }
            StartSpec::GammaSum { shape, scale } => {
                let m = self.drift;
                // E[T] = E[X0]/m, Var[T] = E[X0]/m^3 + Var[X0]/m^2
                let mean = 2.0 * shape * scale / m;
                let var = 2.0 * shape * scale / m.powi(3) + 2.0 * shape * scale * scale / (m * m);
                DistributionSpec::from_moments(distributions::Family::Gamma, mean, var)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FhtOutcome {
    Hit(f64),
    Truncated,
}

impl FhtOutcome {
    pub fn time(self) -> Option<f64> {
        match self {
            FhtOutcome::Hit(t) => Some(t),
            FhtOutcome::Truncated => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FhtSample {
    pub times: Vec<f64>,
    /// Replicate index of each entry in `times`.
    pub replicate_indices: Vec<usize>,
    pub spec: DiffusionSpec,
    pub seed: u64,
    pub truncated_count: usize,
}

impl FhtSample {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["replicate_index", "hitting_time_seconds"])?;
        for (i, t) in self.replicate_indices.iter().zip(&self.times) {
            w.write_record([i.to_string(), t.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

fn run_replicate<R: Rng + ?Sized>(spec: &DiffusionSpec, rng: &mut R) -> FhtOutcome {
    let mut x = spec.start.draw(rng);
    let step = spec.drift * spec.delta;
    let noise = spec.delta.sqrt();
    for t in 1..=spec.max_steps {
        let eps: f64 = rng.sample(StandardNormal);
        x = x - step + noise * eps;
        if x <= 0.0 {
            return FhtOutcome::Hit(t as f64 * spec.delta);
        }
    }
    FhtOutcome::Truncated
}

/// One Euler first-hitting time; the start is drawn first when random.
pub fn euler_fht(spec: &DiffusionSpec, seed: u64) -> Result<FhtOutcome> {
    spec.validate()?;
    Ok(run_replicate(spec, &mut rng::master(seed)))
}

/// `reps` independent replicates; replicate `i` runs on substream `i` of
/// `seed`, and output is in replicate order regardless of scheduling.
pub fn simulate(spec: &DiffusionSpec, reps: usize, seed: u64) -> Result<FhtSample> {
    spec.validate()?;
    if reps == 0 {
        return Err(Error::EmptySample);
    }
    let outcomes: Vec<FhtOutcome> = (0..reps)
        .into_par_iter()
        .map(|i| run_replicate(spec, &mut rng::substream(seed, i as u64)))
        .collect();
    let mut times = Vec::with_capacity(reps);
    let mut replicate_indices = Vec::with_capacity(reps);
    let mut truncated_count = 0;
    for (i, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            FhtOutcome::Hit(t) => {
                times.push(t);
                replicate_indices.push(i);
            }
            FhtOutcome::Truncated => truncated_count += 1,
        }
    }
    Ok(FhtSample {
        times,
        replicate_indices,
        spec: *spec,
        seed,
        truncated_count,
    })
}

/// Like [`simulate`] but refuses samples with too many truncated replicates.
pub fn simulate_checked(spec: &DiffusionSpec, reps: usize, seed: u64) -> Result<FhtSample> {
    let sample = simulate(spec, reps, seed)?;
    if sample.truncated_count as f64 > MAX_TRUNCATED_FRACTION * reps as f64 {
        return Err(Error::Truncation {
            truncated: sample.truncated_count,
            reps,
        });
    }
    Ok(sample)
}

/// Diffusion whose hitting time is IG with mean `mu_hat` and dispersion `phi_hat`:
/// start `sqrt(1/phi)`, drift `sqrt(1/phi)/mu`.
pub fn ig_scheme_spec(mu_hat: f64, phi_hat: f64, delta: f64) -> Result<DiffusionSpec> {
    if !(mu_hat > 0.0 && phi_hat > 0.0) {
        return Err(Error::param(format!(
            "mu_hat {mu_hat} and phi_hat {phi_hat} must be positive"
        )));
    }
    let a = (1.0 / phi_hat).sqrt();
    DiffusionSpec::new(StartSpec::Fixed { a }, a / mu_hat, delta)
}

pub fn simulate_ig_scheme(
    mu_hat: f64,
    phi_hat: f64,
    delta: f64,
    reps: usize,
    seed: u64,
) -> Result<FhtSample> {
    simulate_checked(&ig_scheme_spec(mu_hat, phi_hat, delta)?, reps, seed)
}

/// Diffusion whose hitting time is Gamma(shape, scale): start is the sum of
/// two Gamma(shape, sqrt(scale/2)) draws, drift `1/sqrt(scale/2)`.
pub fn gamma_scheme_spec(shape_hat: f64, scale_hat: f64, delta: f64) -> Result<DiffusionSpec> {
    GammaParams::new(shape_hat, scale_hat)?;
    let s = (scale_hat / 2.0).sqrt();
    DiffusionSpec::new(
        StartSpec::GammaSum {
            shape: shape_hat,
            scale: s,
        },
        1.0 / s,
        delta,
    )
}

pub fn simulate_gamma_scheme(
    shape_hat: f64,
    scale_hat: f64,
    delta: f64,
    reps: usize,
    seed: u64,
) -> Result<FhtSample> {
    simulate_checked(&gamma_scheme_spec(shape_hat, scale_hat, delta)?, reps, seed)
}

/// Exact draws of the hitting time from fixed start `a` with drift `drift`.
pub fn exact_ig_fht(a: f64, drift: f64, n: usize, seed: u64) -> Result<Vec<f64>> {
    if !(a > 0.0 && drift > 0.0) {
        return Err(Error::param(format!(
            "start {a} and drift {drift} must be positive"
        )));
    }
    // mean a/nu, variance a/nu^3 => phi = variance/mean^3 = 1/a^2
    let spec = DistributionSpec::ig(a / drift, 1.0 / (a * a))?;
    distributions::sample(&spec, n, seed)
}

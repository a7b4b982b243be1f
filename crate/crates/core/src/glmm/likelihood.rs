//! Marginal log-likelihood of the random-intercept GLMM,
//!
//! `Σ_k log ∫ Π_t f(y_t | exp(β_{i(t)} + c)) φ(c; 0, τ²) dc`,
//!
//! by adaptive Gauss–Hermite quadrature centered at each subject's
//! conditional mode. Under the log link with cell-means coding the
//! conditional log-likelihood of a subject depends on `c` only through a few
//! per-(subject, level) sufficient statistics.

use std::f64::consts::PI;

use statrs::function::gamma::ln_gamma;

use super::design::DesignMatrix;
use super::quadrature::GaussHermite;
use crate::distributions::Family;
use crate::error::{Error, Result};

/// Point in parameter space on the natural scale.
#[derive(Debug, Clone, PartialEq)]
pub struct GlmmParams {
    pub beta: Vec<f64>,
    pub tau2: f64,
    pub dispersion: f64,
}

#[derive(Debug, Clone)]
struct Cell {
    level: usize,
    first_record: usize,
    n: f64,
    sum_y: f64,
}

#[derive(Debug, Clone)]
struct SubjectBlock {
    cells: Vec<Cell>,
    n: f64,
    sum_log_y: f64,
    sum_inv_y: f64,
}

/// Sufficient statistics of a response vector under a design, reusable
/// across likelihood evaluations.
#[derive(Debug, Clone)]
pub struct LikelihoodData {
    family: Family,
    level_count: usize,
    subjects: Vec<SubjectBlock>,
    n_obs: usize,
}

/// Conditional log-likelihood of one subject as a function of its intercept.
#[derive(Debug, Clone, Copy)]
enum Kernel {
    /// `k0 - k*N*c - k*B*exp(-c)`
    Gamma { k0: f64, kn: f64, kb: f64 },
    /// `k0 - (A*exp(-2c) - 2*D*exp(-c)) / (2*phi)`
    Ig {
        k0: f64,
        a: f64,
        d: f64,
        inv_2phi: f64,
    },
}

impl Kernel {
    fn value(&self, c: f64) -> f64 {
        match *self {
            Kernel::Gamma { k0, kn, kb } => k0 - kn * c - kb * (-c).exp(),
            Kernel::Ig { k0, a, d, inv_2phi } => {
                let e = (-c).exp();
                k0 - inv_2phi * (a * e * e - 2.0 * d * e)
            }
        }
    }

    fn derivatives(&self, c: f64) -> (f64, f64) {
        match *self {
            Kernel::Gamma { kn, kb, .. } => {
                let t = kb * (-c).exp();
                (t - kn, -t)
            }
            Kernel::Ig { a, d, inv_2phi, .. } => {
                let e = (-c).exp();
                (
                    -inv_2phi * (-2.0 * a * e * e + 2.0 * d * e),
                    -inv_2phi * (4.0 * a * e * e - 2.0 * d * e),
                )
            }
        }
    }
}

impl LikelihoodData {
    pub fn new(design: &DesignMatrix, y: &[f64], family: Family) -> Result<Self> {
        if y.len() != design.len() {
            return Err(Error::Schema(format!(
                "{} responses for {} design rows",
                y.len(),
                design.len()
            )));
        }
        let mut subjects = Vec::with_capacity(design.subject_count);
        for range in &design.subject_ranges {
            let mut cells: Vec<Cell> = Vec::new();
            let mut block = SubjectBlock {
                cells: Vec::new(),
                n: 0.0,
                sum_log_y: 0.0,
                sum_inv_y: 0.0,
            };
            for t in range.clone() {
                let yt = y[t];
                if !(yt > 0.0 && yt.is_finite()) {
                    return Err(Error::Evaluation {
                        subject: design.subject[t],
                        level: design.level[t] + 1,
                        record: design.record[t],
                    });
                }
                let level = design.level[t];
                match cells.iter_mut().find(|c| c.level == level) {
                    Some(cell) => {
                        cell.n += 1.0;
                        cell.sum_y += yt;
                    }
                    None => cells.push(Cell {
                        level,
                        first_record: design.record[t],
                        n: 1.0,
                        sum_y: yt,
                    }),
                }
                block.n += 1.0;
                block.sum_log_y += yt.ln();
                block.sum_inv_y += 1.0 / yt;
            }
            cells.sort_by_key(|c| c.level);
            block.cells = cells;
            subjects.push(block);
        }
        Ok(Self {
            family,
            level_count: design.level_count,
            subjects,
            n_obs: y.len(),
        })
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn level_count(&self) -> usize {
        self.level_count
    }

    pub fn subject_count(&self) -> usize {
        self.subjects.len()
    }

    pub fn n_obs(&self) -> usize {
        self.n_obs
    }

    fn kernel(&self, s: &SubjectBlock, params: &GlmmParams) -> Kernel {
        let phi = params.dispersion;
        match self.family {
            Family::Gamma => {
                let k = 1.0 / phi;
                let mut sum_n_beta = 0.0;
                let mut b = 0.0;
                for cell in &s.cells {
                    let beta = params.beta[cell.level];
                    sum_n_beta += cell.n * beta;
                    b += cell.sum_y * (-beta).exp();
                }
                let k0 =
                    s.n * (k * k.ln() - ln_gamma(k)) + (k - 1.0) * s.sum_log_y - k * sum_n_beta;
                Kernel::Gamma {
                    k0,
                    kn: k * s.n,
                    kb: k * b,
                }
            }
            Family::InverseGaussian => {
                let mut a = 0.0;
                let mut d = 0.0;
                for cell in &s.cells {
                    let e = (-params.beta[cell.level]).exp();
                    a += cell.sum_y * e * e;
                    d += cell.n * e;
                }
                let inv_2phi = 0.5 / phi;
                let k0 =
                    -0.5 * s.n * (2.0 * PI * phi).ln() - 1.5 * s.sum_log_y - inv_2phi * s.sum_inv_y;
                Kernel::Ig { k0, a, d, inv_2phi }
            }
        }
    }

    fn subject_loglik(&self, s: &SubjectBlock, params: &GlmmParams, rule: &GaussHermite) -> f64 {
        integrate_subject(&self.kernel(s, params), params.tau2, rule)
    }

    /// Adaptive Gauss–Hermite approximation with `rule.len()` nodes per subject.
    pub fn loglik(&self, params: &GlmmParams, rule: &GaussHermite) -> Result<f64> {
        self.check_params(params)?;
        let mut total = 0.0;
        for (k, s) in self.subjects.iter().enumerate() {
            let v = self.subject_loglik(s, params, rule);
            if !v.is_finite() {
                let cell = s.cells.first();
                return Err(Error::Evaluation {
                    subject: k,
                    level: cell.map_or(0, |c| c.level + 1),
                    record: cell.map_or(0, |c| c.first_record),
                });
            }
            total += v;
        }
        Ok(total)
    }

    fn check_params(&self, params: &GlmmParams) -> Result<()> {
        if params.beta.len() != self.level_count {
            return Err(Error::param(format!(
                "{} fixed effects for {} levels",
                params.beta.len(),
                self.level_count
            )));
        }
        if !(params.tau2 >= 0.0 && params.tau2.is_finite()) {
            return Err(Error::param(format!(
                "tau2 must be nonnegative, got {}",
                params.tau2
            )));
        }
        if !(params.dispersion > 0.0 && params.dispersion.is_finite()) {
            return Err(Error::param(format!(
                "dispersion must be positive, got {}",
                params.dispersion
            )));
        }
        Ok(())
    }
}

/// `ln ∫ exp(kernel(c)) φ(c; 0, τ²) dc` with the nodes of `rule`.
fn integrate_subject(kernel: &Kernel, tau2: f64, rule: &GaussHermite) -> f64 {
    if tau2 == 0.0 {
        return kernel.value(0.0);
    }
    let log_norm = -0.5 * (2.0 * PI * tau2).ln();
    let h = |c: f64| kernel.value(c) - 0.5 * c * c / tau2;
    let (mode, curvature) = conditional_mode(kernel, tau2);
    let scale = if curvature > 0.0 && curvature.is_finite() {
        curvature.sqrt().recip()
    } else {
        tau2.sqrt()
    };
    if rule.len() == 1 {
        let spread = std::f64::consts::SQRT_2 * scale;
        return log_norm + spread.ln() + rule.log_weights_unweighted[0] + h(mode);
    }

    // Nodes are pushed through c = m + z (a + b tanh(z / SIDE_BLEND)), with
    // the left and right widths read off where h has fallen by SIDE_DROP.
    // IG posteriors have a double-exponential cliff on one side and a
    // prior-shaped tail on the other; a single width misses one of them.
    let dh = |c: f64| kernel.derivatives(c).0 - c / tau2;
    let h_mode = h(mode);
    let guess = (2.0 * SIDE_DROP).sqrt() * scale;
    let norm = (2.0 * SIDE_DROP).sqrt();
    let left = side_distance(&h, &dh, mode, h_mode, -1.0, guess) / norm;
    let right = side_distance(&h, &dh, mode, h_mode, 1.0, guess) / norm;
    let a = 0.5 * (left + right);
    let b = (0.5 * (right - left)).clamp(-0.75 * a, 0.75 * a);
    let terms: Vec<f64> = rule
        .nodes
        .iter()
        .zip(&rule.log_weights_unweighted)
        .map(|(x, lw)| {
            let z = std::f64::consts::SQRT_2 * x;
            let u = z / SIDE_BLEND;
            let th = u.tanh();
            let jac = a + b * th + b * u / u.cosh().powi(2);
            lw + h(mode + z * (a + b * th)) + jac.ln()
        })
        .collect();
    log_norm + std::f64::consts::SQRT_2.ln() + log_sum_exp(&terms)
}

const SIDE_DROP: f64 = 6.0;
const SIDE_BLEND: f64 = 3.0;

/// Distance `t > 0` from the mode along `dir` at which `h` first falls to
/// `h_mode - SIDE_DROP`. Bracketed by doubling, then safeguarded Newton.
fn side_distance(
    h: &impl Fn(f64) -> f64,
    dh: &impl Fn(f64) -> f64,
    mode: f64,
    h_mode: f64,
    dir: f64,
    guess: f64,
) -> f64 {
    let target = h_mode - SIDE_DROP;
    let f = |t: f64| h(mode + dir * t) - target;
    let (mut lo, mut hi) = (0.0, guess);
    let mut expansions = 0;
    while f(hi) > 0.0 {
        lo = hi;
        hi *= 2.0;
        expansions += 1;
        if expansions > 200 || !hi.is_finite() {
            return guess;
        }
    }
    let mut t = 0.5 * (lo + hi);
    for _ in 0..100 {
        let ft = f(t);
        if ft > 0.0 {
            lo = t;
        } else {
            hi = t;
        }
        let slope = dir * dh(mode + dir * t);
        let newton = t - ft / slope;
        let next = if slope < 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if (next - t).abs() <= 1e-12 * t {
            return next;
        }
        t = next;
    }
    t
}

/// Maximizer of `kernel(c) - c²/(2τ²)` and the negated second derivative there.
fn conditional_mode(kernel: &Kernel, tau2: f64) -> (f64, f64) {
    let h = |c: f64| kernel.value(c) - 0.5 * c * c / tau2;
    let max_step = tau2.sqrt().max(0.5);
    let mut c = 0.0;
    let mut hc = h(c);
    for _ in 0..200 {
        let (d1, d2) = kernel.derivatives(c);
        let g = d1 - c / tau2;
        let curv = -(d2 - 1.0 / tau2);
        let mut step = if curv > 0.0 {
            g / curv
        } else {
            g.signum() * max_step
        };
        step = step.clamp(-max_step, max_step);
        let mut next = c + step;
        let mut h_next = h(next);
        let mut halvings = 0;
        while !(h_next >= hc - 1e-14 * hc.abs()) && halvings < 60 {
            step *= 0.5;
            next = c + step;
            h_next = h(next);
            halvings += 1;
        }
        c = next;
        hc = h_next;
        if step.abs() <= 1e-13 * (1.0 + c.abs()) {
            break;
        }
    }
    let (_, d2) = kernel.derivatives(c);
    (c, -(d2 - 1.0 / tau2))
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Marginal log-likelihood at `params` using `nagq` adaptive quadrature nodes
/// (`nagq = 1` is the Laplace approximation).
pub fn marginal_loglik(
    params: &GlmmParams,
    design: &DesignMatrix,
    y: &[f64],
    family: Family,
    nagq: usize,
) -> Result<f64> {
    if nagq == 0 {
        return Err(Error::param("nagq must be at least 1"));
    }
    let data = LikelihoodData::new(design, y, family)?;
    data.loglik(params, &GaussHermite::new(nagq))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::{self, DistributionSpec};
    use approx::assert_abs_diff_eq;

    /// Per-trial log-density sum at intercept `c`, through the distributions module.
    fn direct_conditional(
        beta: &[f64],
        phi: f64,
        family: Family,
        levels: &[usize],
        y: &[f64],
        c: f64,
    ) -> f64 {
        levels
            .iter()
            .zip(y)
            .map(|(&l, &yt)| {
                let spec = DistributionSpec::from_mean_dispersion(family, (beta[l] + c).exp(), phi)
                    .unwrap();
                distributions::ln_pdf(&spec, yt).unwrap()
            })
            .sum()
    }

    fn toy() -> (DesignMatrix, Vec<f64>, Vec<usize>) {
        let subjects = [0, 0, 0, 1, 1, 2, 2, 2, 2];
        let levels = [0, 1, 1, 0, 1, 1, 0, 0, 1];
        let y = vec![0.6, 1.1, 0.9, 0.4, 0.8, 1.5, 0.7, 0.55, 1.2];
        let d = DesignMatrix::from_indices(2, &subjects, &levels).unwrap();
        let y_sorted: Vec<f64> = d.record.iter().map(|&r| y[r]).collect();
        let lv = d.level.clone();
        (d, y_sorted, lv)
    }

    #[test]
    fn zero_tau_is_independent_glm() {
        let (d, y, levels) = toy();
        for family in [Family::Gamma, Family::InverseGaussian] {
            let params = GlmmParams {
                beta: vec![-0.4, 0.1],
                tau2: 0.0,
                dispersion: 0.7,
            };
            let ll = marginal_loglik(&params, &d, &y, family, 15).unwrap();
            let direct = direct_conditional(&params.beta, 0.7, family, &levels, &y, 0.0);
            assert_abs_diff_eq!(ll, direct, epsilon = 1e-10);
        }
    }

    #[test]
    fn kernel_matches_direct_density() {
        let (d, y, levels) = toy();
        for family in [Family::Gamma, Family::InverseGaussian] {
            let params = GlmmParams {
                beta: vec![-0.2, 0.3],
                tau2: 0.3,
                dispersion: 0.5,
            };
            let data = LikelihoodData::new(&d, &y, family).unwrap();
            for c in [-1.0, -0.2, 0.0, 0.7] {
                let mut total = 0.0;
                for (k, s) in data.subjects.iter().enumerate() {
                    let range = d.subject_ranges[k].clone();
                    let direct = direct_conditional(
                        &params.beta,
                        0.5,
                        family,
                        &levels[range.clone()],
                        &y[range],
                        c,
                    );
                    assert_abs_diff_eq!(data.kernel(s, &params).value(c), direct, epsilon = 1e-10);
                    total += direct;
                }
                assert!(total.is_finite());
            }
        }
    }

    #[test]
    fn laplace_and_quadrature_close_on_informative_data() {
        let (d, y, _) = toy();
        let params = GlmmParams {
            beta: vec![-0.4, 0.1],
            tau2: 0.2,
            dispersion: 0.3,
        };
        let l1 = marginal_loglik(&params, &d, &y, Family::Gamma, 1).unwrap();
        let l25 = marginal_loglik(&params, &d, &y, Family::Gamma, 25).unwrap();
        assert!((l1 - l25).abs() < 0.05, "{l1} vs {l25}");
    }

    #[test]
    fn rejects_bad_parameters() {
        let (d, y, _) = toy();
        let bad = GlmmParams {
            beta: vec![0.0],
            tau2: 0.1,
            dispersion: 1.0,
        };
        assert!(marginal_loglik(&bad, &d, &y, Family::Gamma, 5).is_err());
        let ok = GlmmParams {
            beta: vec![0.0, 0.0],
            tau2: 0.1,
            dispersion: 1.0,
        };
        assert!(marginal_loglik(&ok, &d, &y, Family::Gamma, 0).is_err());
    }

    fn trapezoid(kernel: &Kernel, tau2: f64) -> f64 {
        let tau = tau2.sqrt();
        let n = 200_000;
        let step = 16.0 * tau / n as f64;
        let logs: Vec<f64> = (0..=n)
            .map(|j| {
                let c = -8.0 * tau + j as f64 * step;
                let end = if j == 0 || j == n { 0.5f64.ln() } else { 0.0 };
                end + kernel.value(c) - 0.5 * c * c / tau2
            })
            .collect();
        log_sum_exp(&logs) + step.ln() - 0.5 * (2.0 * PI * tau2).ln()
    }

    #[test]
    fn skewed_ig_integrand() {
        // one short trial against a mean well above it: a sharp left cliff
        // and a prior-shaped right tail
        let ig = Kernel::Ig {
            k0: 0.0,
            a: 0.1229,
            d: 1.1676,
            inv_2phi: 0.5 / 0.903,
        };
        let gamma = Kernel::Gamma {
            k0: 0.0,
            kn: 4.0,
            kb: 2.5,
        };
        let rule = GaussHermite::new(25);
        for (kernel, tau2) in [(ig, 0.405), (ig, 0.9), (gamma, 0.5), (gamma, 1.5)] {
            let got = integrate_subject(&kernel, tau2, &rule);
            assert_abs_diff_eq!(got, trapezoid(&kernel, tau2), epsilon = 1e-5);
        }
    }

    #[test]
    fn single_node_is_laplace() {
        let kernel = Kernel::Gamma {
            k0: 0.0,
            kn: 4.0,
            kb: 2.5,
        };
        let (m, curv) = conditional_mode(&kernel, 0.3);
        let laplace = kernel.value(m) - 0.5 * m * m / 0.3 + 0.5 * (1.0 / (0.3 * curv)).ln();
        assert_abs_diff_eq!(
            integrate_subject(&kernel, 0.3, &GaussHermite::new(1)),
            laplace,
            epsilon = 1e-12
        );
    }

    #[test]
    fn mode_solves_first_order_condition() {
        let kernel = Kernel::Ig {
            k0: 0.0,
            a: 3.0,
            d: 5.0,
            inv_2phi: 0.8,
        };
        let (c, curv) = conditional_mode(&kernel, 0.4);
        let (d1, _) = kernel.derivatives(c);
        assert_abs_diff_eq!(d1 - c / 0.4, 0.0, epsilon = 1e-9);
        assert!(curv > 0.0);
    }
}

//! Goodness-of-fit diagnostics: density and CDF overlays, Q-Q and P-P
//! points, and Kolmogorov-Smirnov statistics with asymptotic p-values.

mod svg;

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::distributions::{self, DistributionSpec};
use crate::error::{Error, Result};

pub use svg::render_svg;

pub const DEFAULT_BINS: usize = 30;

/// Name of the formal test reported alongside the visual panels.
pub const KS_LABEL: &str = "Kolmogorov-Smirnov (one-sample, asymptotic p-value)";

fn sorted(sample: &[f64]) -> Result<Vec<f64>> {
    if sample.is_empty() {
        return Err(Error::EmptySample);
    }
    if sample.iter().any(|y| y.is_nan()) {
        return Err(Error::domain("sample contains NaN"));
    }
    let mut s = sample.to_vec();
    s.sort_by(f64::total_cmp);
    Ok(s)
}

/// `P(K > lambda)` for the Kolmogorov distribution.
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 1.18 {
        // Jacobi-transformed series converges fast for small lambda
        let c = -PI * PI / (8.0 * lambda * lambda);
        let mut cdf = 0.0;
        for k in 1..=20 {
            let m = (2 * k - 1) as f64;
            cdf += (c * m * m).exp();
        }
        (1.0 - (2.0 * PI).sqrt() / lambda * cdf).clamp(0.0, 1.0)
    } else {
        let mut sum = 0.0;
        for k in 1..=100 {
            let kf = k as f64;
            let term = (-2.0 * kf * kf * lambda * lambda).exp();
            sum += if k % 2 == 1 { term } else { -term };
            if term < 1e-300 {
                break;
            }
        }
        (2.0 * sum).clamp(0.0, 1.0)
    }
}

/// One-sample KS statistic against an arbitrary continuous CDF.
pub fn ks_statistic_with<F: Fn(f64) -> Result<f64>>(sample: &[f64], cdf: F) -> Result<f64> {
    let s = sorted(sample)?;
    let n = s.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &y) in s.iter().enumerate() {
        let f = cdf(y)?;
        d = d.max((i + 1) as f64 / n - f).max(f - i as f64 / n);
    }
    Ok(d.clamp(0.0, 1.0))
}

/// One-sample KS test; returns `(D_n, p-value)` with `p = Q_K(sqrt(n) D_n)`.
pub fn ks_test(sample: &[f64], spec: &DistributionSpec) -> Result<(f64, f64)> {
    let d = ks_statistic_with(sample, |y| distributions::cdf(spec, y))?;
    Ok((d, kolmogorov_sf((sample.len() as f64).sqrt() * d)))
}

/// Two-sample KS statistic `sup |F_a - F_b|`.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<f64> {
    let a = sorted(a)?;
    let b = sorted(b)?;
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(d)
}

/// Asymptotic p-value of a two-sample statistic.
pub fn ks_two_sample_pvalue(d: f64, na: usize, nb: usize) -> f64 {
    let ne = (na * nb) as f64 / (na + nb) as f64;
    kolmogorov_sf(ne.sqrt() * d)
}

/// Asymptotic critical value of `D_n` at level `alpha` for effective size `n`.
pub fn ks_critical_value(n: f64, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) || !(n > 0.0) {
        return Err(Error::domain(format!("invalid size {n} or level {alpha}")));
    }
    // invert kolmogorov_sf by bisection
    let (mut lo, mut hi) = (0.0, 10.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if kolmogorov_sf(mid) > alpha {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi) / n.sqrt())
}

fn plotting_position(i: usize, n: usize) -> f64 {
    (i as f64 + 0.5) / n as f64
}

/// `(theoretical quantile, empirical quantile)` at positions `(i - 0.5)/n`.
pub fn qq_points(sample: &[f64], spec: &DistributionSpec) -> Result<Vec<(f64, f64)>> {
    let s = sorted(sample)?;
    let n = s.len();
    s.iter()
        .enumerate()
        .map(|(i, &y)| Ok((distributions::quantile(spec, plotting_position(i, n))?, y)))
        .collect()
}

/// `(F(y_(i)), (i - 0.5)/n)`.
pub fn pp_points(sample: &[f64], spec: &DistributionSpec) -> Result<Vec<(f64, f64)>> {
    let s = sorted(sample)?;
    let n = s.len();
    s.iter()
        .enumerate()
        .map(|(i, &y)| Ok((distributions::cdf(spec, y)?, plotting_position(i, n))))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityOverlay {
    /// `bins + 1` edges.
    pub edges: Vec<f64>,
    /// Histogram heights normalized to unit area.
    pub heights: Vec<f64>,
    pub midpoints: Vec<f64>,
    /// Theoretical density at the midpoints.
    pub density: Vec<f64>,
}

impl DensityOverlay {
    pub fn l1_distance(&self) -> f64 {
        self.edges
            .windows(2)
            .zip(self.heights.iter().zip(&self.density))
            .map(|(e, (h, p))| (e[1] - e[0]) * (h - p).abs())
            .sum()
    }
}

pub fn density_overlay(
    sample: &[f64],
    spec: &DistributionSpec,
    bins: usize,
) -> Result<DensityOverlay> {
    if bins == 0 {
        return Err(Error::domain("at least one bin is required"));
    }
    let s = sorted(sample)?;
    let (mut lo, mut hi) = (s[0], s[s.len() - 1]);
    if hi <= lo {
        let pad = if lo == 0.0 { 0.5 } else { 0.5 * lo.abs() };
        lo -= pad;
        hi += pad;
    }
    let width = (hi - lo) / bins as f64;
    let edges: Vec<f64> = (0..=bins)
        .map(|b| if b == bins { hi } else { lo + b as f64 * width })
        .collect();
    let mut counts = vec![0usize; bins];
    for &y in &s {
        let b = (((y - lo) / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    let n = s.len() as f64;
    let heights = counts
        .iter()
        .zip(edges.windows(2))
        .map(|(&c, e)| c as f64 / (n * (e[1] - e[0])))
        .collect();
    let midpoints: Vec<f64> = edges.windows(2).map(|e| 0.5 * (e[0] + e[1])).collect();
    let density = midpoints
        .iter()
        .map(|&m| {
            if m > 0.0 {
                distributions::pdf(spec, m)
            } else {
                Ok(0.0)
            }
        })
        .collect::<Result<_>>()?;
    Ok(DensityOverlay {
        edges,
        heights,
        midpoints,
        density,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdfOverlay {
    /// Sorted sample.
    pub x: Vec<f64>,
    /// Empirical CDF `i/n` just after each order statistic.
    pub empirical: Vec<f64>,
    pub theoretical: Vec<f64>,
}

pub fn cdf_overlay(sample: &[f64], spec: &DistributionSpec) -> Result<CdfOverlay> {
    let x = sorted(sample)?;
    let n = x.len() as f64;
    let empirical = (1..=x.len()).map(|i| i as f64 / n).collect();
    let theoretical = x
        .iter()
        .map(|&y| distributions::cdf(spec, y))
        .collect::<Result<_>>()?;
    Ok(CdfOverlay {
        x,
        empirical,
        theoretical,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GofReport {
    pub test: String,
    pub spec: DistributionSpec,
    pub n: usize,
    pub ks_statistic: f64,
    pub ks_pvalue: f64,
    pub qq_points: Vec<(f64, f64)>,
    pub pp_points: Vec<(f64, f64)>,
    pub density_overlay: DensityOverlay,
    pub cdf_overlay: CdfOverlay,
}

impl GofReport {
    pub fn new(sample: &[f64], spec: &DistributionSpec, bins: usize) -> Result<Self> {
        let (ks_statistic, ks_pvalue) = ks_test(sample, spec)?;
        Ok(Self {
            test: KS_LABEL.to_string(),
            spec: *spec,
            n: sample.len(),
            ks_statistic,
            ks_pvalue,
            qq_points: qq_points(sample, spec)?,
            pp_points: pp_points(sample, spec)?,
            density_overlay: density_overlay(sample, spec, bins)?,
            cdf_overlay: cdf_overlay(sample, spec)?,
        })
    }

    pub fn mean_abs_qq_deviation(&self) -> f64 {
        self.qq_points
            .iter()
            .map(|(t, e)| (t - e).abs())
            .sum::<f64>()
            / self.qq_points.len() as f64
    }

    /// Writes `qq.csv`, `pp.csv`, `density.csv`, `cdf.csv`, `gof.svg` and
    /// `gof.json` (summary without the panel data) into `dir`. Returns the
    /// paths written.
    pub fn write_dir(&self, dir: &Path) -> Result<Vec<std::path::PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        let mut emit = |name: &str, header: &[&str], rows: Vec<Vec<f64>>| -> Result<()> {
            let path = dir.join(name);
            let mut w = csv::Writer::from_path(&path)?;
            w.write_record(header)?;
            for row in rows {
                w.write_record(row.iter().map(f64::to_string))?;
            }
            w.flush()?;
            written.push(path);
            Ok(())
        };
        emit(
            "qq.csv",
            &["theoretical_quantile", "empirical_quantile"],
            self.qq_points.iter().map(|&(t, e)| vec![t, e]).collect(),
        )?;
        emit(
            "pp.csv",
            &["theoretical_probability", "empirical_probability"],
            self.pp_points.iter().map(|&(t, e)| vec![t, e]).collect(),
        )?;
        let d = &self.density_overlay;
        emit(
            "density.csv",
            &[
                "bin_left",
                "bin_right",
                "bin_mid",
                "histogram_density",
                "theoretical_density",
            ],
            (0..d.heights.len())
                .map(|b| {
                    vec![
                        d.edges[b],
                        d.edges[b + 1],
                        d.midpoints[b],
                        d.heights[b],
                        d.density[b],
                    ]
                })
                .collect(),
        )?;
        let c = &self.cdf_overlay;
        emit(
            "cdf.csv",
            &["rt_seconds", "empirical_cdf", "theoretical_cdf"],
            (0..c.x.len())
                .map(|i| vec![c.x[i], c.empirical[i], c.theoretical[i]])
                .collect(),
        )?;

        let svg_path = dir.join("gof.svg");
        std::fs::write(&svg_path, render_svg(self))?;
        written.push(svg_path);

        let summary = serde_json::json!({
            "test": self.test,
            "spec": self.spec,
            "n": self.n,
            "ks_statistic": self.ks_statistic,
            "ks_pvalue": self.ks_pvalue,
            "mean_abs_qq_deviation": self.mean_abs_qq_deviation(),
            "density_l1": self.density_overlay.l1_distance(),
        });
        let json_path = dir.join("gof.json");
        let mut f = std::fs::File::create(&json_path)?;
        serde_json::to_writer_pretty(&mut f, &summary)?;
        writeln!(f)?;
        written.push(json_path);
        Ok(written)
    }
}

//! Minimal SVG renderer for the four diagnostic panels.

use std::fmt::Write;

use super::GofReport;
use crate::distributions::DistributionSpec;

const PANEL_W: f64 = 420.0;
const PANEL_H: f64 = 320.0;
const MARGIN_L: f64 = 62.0;
const MARGIN_R: f64 = 16.0;
const MARGIN_T: f64 = 30.0;
const MARGIN_B: f64 = 48.0;
const TICKS: usize = 5;

struct Frame {
    x0: f64,
    y0: f64,
    xmin: f64,
    xmax: f64,
    ymin: f64,
    ymax: f64,
}

impl Frame {
    fn new(col: usize, row: usize, (xmin, xmax): (f64, f64), (ymin, ymax): (f64, f64)) -> Self {
        let widen = |lo: f64, hi: f64| {
            if hi > lo {
                (lo, hi)
            } else {
                (lo - 0.5, hi + 0.5)
            }
        };
        let (xmin, xmax) = widen(xmin, xmax);
        let (ymin, ymax) = widen(ymin, ymax);
        Self {
            x0: col as f64 * PANEL_W,
            y0: row as f64 * PANEL_H,
            xmin,
            xmax,
            ymin,
            ymax,
        }
    }

    fn px(&self, x: f64) -> f64 {
        self.x0
            + MARGIN_L
            + (x - self.xmin) / (self.xmax - self.xmin) * (PANEL_W - MARGIN_L - MARGIN_R)
    }

    fn py(&self, y: f64) -> f64 {
        self.y0 + PANEL_H
            - MARGIN_B
            - (y - self.ymin) / (self.ymax - self.ymin) * (PANEL_H - MARGIN_T - MARGIN_B)
    }

    fn axes(&self, out: &mut String, title: &str, xlabel: &str, ylabel: &str) {
        let (l, r) = (self.px(self.xmin), self.px(self.xmax));
        let (b, t) = (self.py(self.ymin), self.py(self.ymax));
        let _ = write!(
            out,
            r##"<rect x="{l:.1}" y="{t:.1}" width="{:.1}" height="{:.1}" fill="none" stroke="#333"/>"##,
            r - l,
            b - t
        );
        for k in 0..=TICKS {
            let fx = self.xmin + (self.xmax - self.xmin) * k as f64 / TICKS as f64;
            let fy = self.ymin + (self.ymax - self.ymin) * k as f64 / TICKS as f64;
            let (x, y) = (self.px(fx), self.py(fy));
            let _ = write!(
                out,
                r##"<line x1="{x:.1}" y1="{b:.1}" x2="{x:.1}" y2="{:.1}" stroke="#333"/><text x="{x:.1}" y="{:.1}" font-size="10" text-anchor="middle">{}</text>"##,
                b + 4.0,
                b + 16.0,
                tick_label(fx)
            );
            let _ = write!(
                out,
                r##"<line x1="{:.1}" y1="{y:.1}" x2="{l:.1}" y2="{y:.1}" stroke="#333"/><text x="{:.1}" y="{:.1}" font-size="10" text-anchor="end">{}</text>"##,
                l - 4.0,
                l - 6.0,
                y + 3.0,
                tick_label(fy)
            );
        }
        let cx = 0.5 * (l + r);
        let cy = 0.5 * (t + b);
        let _ = write!(
            out,
            r#"<text x="{cx:.1}" y="{:.1}" font-size="13" text-anchor="middle" font-weight="bold">{}</text><text x="{cx:.1}" y="{:.1}" font-size="11" text-anchor="middle">{}</text><text x="{:.1}" y="{cy:.1}" font-size="11" text-anchor="middle" transform="rotate(-90 {:.1} {cy:.1})">{}</text>"#,
            self.y0 + 20.0,
            escape(title),
            b + 34.0,
            escape(xlabel),
            self.x0 + 16.0,
            self.x0 + 16.0,
            escape(ylabel)
        );
    }

    fn polyline(&self, out: &mut String, pts: impl Iterator<Item = (f64, f64)>, color: &str) {
        let path: Vec<String> = pts
            .map(|(x, y)| format!("{:.2},{:.2}", self.px(x), self.py(y)))
            .collect();
        let _ = write!(
            out,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
            path.join(" ")
        );
    }

    fn points(&self, out: &mut String, pts: &[(f64, f64)], color: &str) {
        for &(x, y) in pts {
            let _ = write!(
                out,
                r#"<circle cx="{:.2}" cy="{:.2}" r="1.6" fill="{color}"/>"#,
                self.px(x),
                self.py(y)
            );
        }
    }
}

fn tick_label(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 1e4 || v.abs() < 1e-2 {
        format!("{v:.1e}")
    } else {
        let s = format!("{v:.2}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(v), hi.max(v))
        })
}

/// Standalone SVG document with density, CDF, Q-Q and P-P panels.
pub fn render_svg(report: &GofReport) -> String {
    let mut out = String::new();
    let _ = write!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif">"#,
        w = 2.0 * PANEL_W,
        h = 2.0 * PANEL_H + 44.0
    );
    out.push_str(r#"<rect width="100%" height="100%" fill="white"/>"#);

    let d = &report.density_overlay;
    let xr = (d.edges[0], d.edges[d.edges.len() - 1]);
    let ymax = range(d.heights.iter().chain(&d.density).copied()).1;
    let f = Frame::new(0, 0, xr, (0.0, ymax));
    f.axes(&mut out, "Density", "RT (s)", "density");
    for (e, h) in d.edges.windows(2).zip(&d.heights) {
        let (l, r, top, base) = (f.px(e[0]), f.px(e[1]), f.py(*h), f.py(0.0));
        let _ = write!(
            out,
            r##"<rect x="{l:.2}" y="{top:.2}" width="{:.2}" height="{:.2}" fill="#9ecae1" stroke="#4a90c2" stroke-width="0.5"/>"##,
            r - l,
            base - top
        );
    }
    f.polyline(
        &mut out,
        d.midpoints.iter().copied().zip(d.density.iter().copied()),
        "#d62728",
    );

    let c = &report.cdf_overlay;
    let xr = range(c.x.iter().copied());
    let f = Frame::new(1, 0, xr, (0.0, 1.0));
    f.axes(&mut out, "CDF", "RT (s)", "cumulative probability");
    let mut steps = Vec::with_capacity(2 * c.x.len() + 1);
    let mut prev = 0.0;
    for (x, e) in c.x.iter().zip(&c.empirical) {
        steps.push((*x, prev));
        steps.push((*x, *e));
        prev = *e;
    }
    f.polyline(&mut out, steps.into_iter(), "#1f77b4");
    f.polyline(
        &mut out,
        c.x.iter().copied().zip(c.theoretical.iter().copied()),
        "#d62728",
    );

    let q = &report.qq_points;
    let (lo, hi) = range(q.iter().flat_map(|&(t, e)| [t, e]));
    let f = Frame::new(0, 1, (lo, hi), (lo, hi));
    f.axes(&mut out, "Q-Q", "theoretical quantile", "sample quantile");
    f.polyline(&mut out, [(lo, lo), (hi, hi)].into_iter(), "#999");
    f.points(&mut out, q, "#1f77b4");

    let f = Frame::new(1, 1, (0.0, 1.0), (0.0, 1.0));
    f.axes(
        &mut out,
        "P-P",
        "theoretical probability",
        "empirical probability",
    );
    f.polyline(&mut out, [(0.0, 0.0), (1.0, 1.0)].into_iter(), "#999");
    f.points(&mut out, &report.pp_points, "#1f77b4");

    let law = match report.spec {
        DistributionSpec::InverseGaussian(p) => format!("IG(mu={:.4}, phi={:.4})", p.mu, p.phi),
        DistributionSpec::Gamma(p) => format!("Gamma(shape={:.4}, scale={:.4})", p.shape, p.scale),
    };
    let _ = write!(
        out,
        r#"<text x="{x:.1}" y="{:.1}" font-size="12" text-anchor="middle">{}</text><text x="{x:.1}" y="{:.1}" font-size="12" text-anchor="middle">D = {:.4}, p = {:.4}, n = {} against {}</text>"#,
        2.0 * PANEL_H + 16.0,
        escape(&report.test),
        2.0 * PANEL_H + 34.0,
        report.ks_statistic,
        report.ks_pvalue,
        report.n,
        law,
        x = PANEL_W,
    );
    out.push_str("</svg>\n");
    out
}

//! Minimal standalone SVG charts for the CSV artifacts.

use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::output::Table;
use crate::error::{Error, Result};
use crate::fit::fit_power_law;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlotKind {
    /// `x_center,rho_hat[,stderr]` on uniform cells.
    Density,
    /// `level,error[,stderr]`, log-log with fitted slope.
    Rate,
    /// `distance,increment`, log-log with fitted exponent.
    Exponent,
}

impl PlotKind {
    fn columns(self) -> (&'static str, &'static str) {
        match self {
            PlotKind::Density => ("x_center", "rho_hat"),
            PlotKind::Rate => ("level", "error"),
            PlotKind::Exponent => ("distance", "increment"),
        }
    }

    fn logarithmic(self) -> bool {
        !matches!(self, PlotKind::Density)
    }
}

impl std::str::FromStr for PlotKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "density" => Ok(PlotKind::Density),
            "rate" => Ok(PlotKind::Rate),
            "exponent" => Ok(PlotKind::Exponent),
            other => Err(Error::Config(format!("unknown plot kind {other:?}; expected density, rate or exponent"))),
        }
    }
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 50.0;

struct Axis {
    lo: f64,
    hi: f64,
    log: bool,
}

impl Axis {
    fn new(values: impl Iterator<Item = f64>, log: bool) -> Axis {
        let (mut lo, mut hi) = values
            .map(|v| if log { v.log10() } else { v })
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        if hi - lo < 1e-12 {
            let pad = if log { 0.5 } else { 0.5 * lo.abs().max(1.0) };
            lo -= pad;
            hi += pad;
        } else {
            let pad = 0.05 * (hi - lo);
            lo -= pad;
            hi += pad;
        }
        Axis { lo, hi, log }
    }

    fn unit(&self, v: f64) -> f64 {
        let t = if self.log { v.log10() } else { v };
        (t - self.lo) / (self.hi - self.lo)
    }

    fn ticks(&self) -> Vec<(f64, String)> {
        if self.log {
            let (a, b) = (self.lo.ceil() as i32, self.hi.floor() as i32);
            (a..=b).map(|k| (10f64.powi(k), format!("1e{k}"))).collect()
        } else {
            let raw = (self.hi - self.lo) / 5.0;
            let mag = 10f64.powf(raw.log10().floor());
            let step = [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| *s >= raw).unwrap_or(10.0 * mag);
            let mut t = (self.lo / step).ceil() * step;
            let mut out = Vec::new();
            while t <= self.hi + 1e-12 * step {
                let label = format!("{:.*}", (-step.log10().floor()).max(0.0) as usize, t);
                out.push((t, label));
                t += step;
            }
            out
        }
    }
}

fn px(a: &Axis, v: f64) -> f64 {
    LEFT + a.unit(v) * (WIDTH - LEFT - RIGHT)
}

fn py(a: &Axis, v: f64) -> f64 {
    HEIGHT - BOTTOM - a.unit(v) * (HEIGHT - TOP - BOTTOM)
}

/// Renders a CSV table as an SVG document.
pub fn emit_plot(csv: &str, kind: PlotKind) -> Result<String> {
    let table = Table::parse(csv)?;
    let (xc, yc) = kind.columns();
    let (Some(x), Some(y)) = (table.column(xc), table.column(yc)) else {
        return Err(Error::Schema(format!(
            "{kind:?} plot needs columns {xc},{yc}; found {}",
            table.columns.join(",")
        )));
    };
    if x.is_empty() {
        return Err(Error::Schema("no data rows to plot".into()));
    }
    let err = table.column("stderr");
    if x.iter().chain(&y).any(|v| !v.is_finite()) {
        return Err(Error::Schema("plot data must be finite".into()));
    }
    let log = kind.logarithmic();
    if log && x.iter().chain(&y).any(|&v| v <= 0.0) {
        return Err(Error::Schema("log-scale plot data must be positive".into()));
    }

    let e = err.clone().unwrap_or_else(|| vec![0.0; y.len()]);
    let lows: Vec<f64> = y.iter().zip(&e).map(|(v, s)| if log { *v } else { v - s }).collect();
    let highs: Vec<f64> = y.iter().zip(&e).map(|(v, s)| if log { *v } else { v + s }).collect();
    let ax = Axis::new(x.iter().copied(), log);
    let ay = Axis::new(lows.iter().chain(&highs).copied(), log);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let (x0, x1, y0, y1) = (LEFT, WIDTH - RIGHT, TOP, HEIGHT - BOTTOM);
    let _ = writeln!(svg, r#"<path d="M{x0},{y0} L{x0},{y1} L{x1},{y1}" fill="none" stroke="black"/>"#);
    for (t, label) in ax.ticks() {
        let p = px(&ax, t);
        let _ = writeln!(svg, r#"<line x1="{p:.2}" y1="{y1}" x2="{p:.2}" y2="{:.2}" stroke="black"/>"#, y1 + 5.0);
        let _ = writeln!(svg, r#"<text x="{p:.2}" y="{:.2}" text-anchor="middle">{label}</text>"#, y1 + 18.0);
    }
    for (t, label) in ay.ticks() {
        let p = py(&ay, t);
        let _ = writeln!(svg, r#"<line x1="{:.2}" y1="{p:.2}" x2="{x0}" y2="{p:.2}" stroke="black"/>"#, x0 - 5.0);
        let _ = writeln!(svg, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{label}</text>"#, x0 - 8.0, p + 4.0);
    }
    let _ = writeln!(svg, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{xc}</text>"#, 0.5 * (x0 + x1), HEIGHT - 8.0);
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">{yc}</text>"#,
        0.5 * (y0 + y1),
        0.5 * (y0 + y1)
    );

    if let Some(se) = &err {
        for ((xv, yv), s) in x.iter().zip(&y).zip(se) {
            let (lo, hi) = if log {
                ((yv - s).max(yv * 1e-3), yv + s)
            } else {
                (yv - s, yv + s)
            };
            let p = px(&ax, *xv);
            let _ = writeln!(
                svg,
                r#"<line class="errorbar" x1="{p:.2}" y1="{:.2}" x2="{p:.2}" y2="{:.2}" stroke="gray"/>"#,
                py(&ay, lo).clamp(y0, y1),
                py(&ay, hi).clamp(y0, y1)
            );
        }
    }
    let points: Vec<String> = x.iter().zip(&y).map(|(a, b)| format!("{:.2},{:.2}", px(&ax, *a), py(&ay, *b))).collect();
    let _ = writeln!(svg, r#"<polyline points="{}" fill="none" stroke="steelblue"/>"#, points.join(" "));
    for p in &points {
        let (cx, cy) = p.split_once(',').unwrap_or(("0", "0"));
        let _ = writeln!(svg, r#"<circle cx="{cx}" cy="{cy}" r="3" fill="steelblue"/>"#);
    }

    let legend = match kind {
        PlotKind::Density => {
            let dx = 1.0 / y.len() as f64;
            format!("mass = {:.6}", y.iter().sum::<f64>() * dx)
        }
        PlotKind::Rate | PlotKind::Exponent => {
            let name = if kind == PlotKind::Rate { "slope" } else { "exponent" };
            match fit_power_law(&x, &y) {
                Ok(f) => {
                    let (xa, xb) = (ax_bounds(&x).0, ax_bounds(&x).1);
                    let fy = |v: f64| (f.intercept + f.slope * v.ln()).exp();
                    let _ = writeln!(
                        svg,
                        r#"<line class="fit" x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="firebrick" stroke-dasharray="6 4"/>"#,
                        px(&ax, xa),
                        py(&ay, fy(xa)).clamp(y0, y1),
                        px(&ax, xb),
                        py(&ay, fy(xb)).clamp(y0, y1)
                    );
                    format!("{name} {:.2} ± {:.2} (R² {:.3})", f.slope, f.slope_ci95, f.r2)
                }
                Err(_) => format!("{name}: too few points to fit"),
            }
        }
    };
    let _ = writeln!(svg, r#"<text class="legend" x="{:.2}" y="{:.2}">{legend}</text>"#, x0 + 12.0, y0 + 4.0);
    svg.push_str("</svg>\n");
    Ok(svg)
}

fn ax_bounds(v: &[f64]) -> (f64, f64) {
    v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)))
}

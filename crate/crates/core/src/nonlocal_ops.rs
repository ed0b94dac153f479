//! Pointwise evaluators of the constant-extension operators:
//! the Neumann fractional Laplacian, the nonlocal Neumann gradient, and their
//! ε-level counterparts built from the kernels `F₀`, `F₁`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{ExtendedField, NodalField};
use crate::model::Model;
use crate::quad::{self, Tol};

/// How the principal-value part is treated near the evaluation point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subtraction {
    /// Symmetric pairing only; adaptive quadrature on the paired integrand.
    Zero,
    /// Pairing plus division by `h²`, integrated with a Gauss–Jacobi rule.
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadratureSpec {
    /// Nodes of the Gauss–Jacobi rule used on singular panels.
    pub nodes: usize,
    pub subtraction: Subtraction,
    /// Window half-width as a fraction of `min(x, 1-x)`.
    pub window: f64,
    /// Closed-form exterior tails (numerical when false).
    pub analytic_tails: bool,
    pub rel_tol: f64,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        QuadratureSpec {
            nodes: 24,
            subtraction: Subtraction::Linear,
            window: 0.5,
            analytic_tails: true,
            rel_tol: 1e-10,
        }
    }
}

impl QuadratureSpec {
    pub fn validate(&self) -> Result<()> {
        if self.nodes < 2 {
            return Err(Error::InvalidParameter("quadrature node count must be at least 2".into()));
        }
        if !(self.window > 0.0 && self.window < 1.0) {
            return Err(Error::InvalidParameter("principal-value window fraction must lie in (0,1)".into()));
        }
        if !(self.rel_tol > 0.0 && self.rel_tol < 1e-2) {
            return Err(Error::InvalidParameter("quadrature tolerance must lie in (0, 1e-2)".into()));
        }
        Ok(())
    }
}

/// Parameters of the limit operators (no kernel tables needed).
#[derive(Debug, Clone, Copy)]
pub struct LimitOps {
    pub s: f64,
    pub c1s: f64,
    pub spec: QuadratureSpec,
}

impl LimitOps {
    pub fn new(s: f64) -> Self {
        LimitOps {
            s,
            c1s: crate::equilibria::frac_laplacian_constant(s),
            spec: QuadratureSpec::default(),
        }
    }
}

impl Model {
    pub fn limit_ops(&self) -> LimitOps {
        LimitOps {
            s: self.params.s,
            c1s: self.constants.c1s,
            spec: self.quadrature,
        }
    }
}

fn field_scale(u: &ExtendedField, x: f64) -> f64 {
    (0..=64)
        .map(|k| u.value(k as f64 / 64.0).abs())
        .fold(u.value(x).abs(), f64::max)
        .max(1e-300)
}

fn tol_for(spec: &QuadratureSpec, scale: f64) -> Tol {
    Tol::new(spec.rel_tol, spec.rel_tol * 1e-3 * scale)
}

fn sorted_points(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

/// `(-Δ)ₙˢ u(x) = (-Δ)ˢ ũ(x)` for `x ∈ (0,1)`.
pub fn frac_lap_n(ops: &LimitOps, u: &ExtendedField, x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::NonFinite("evaluation point"));
    }
    if x <= 0.0 || x >= 1.0 {
        return Err(Error::OutsideInterval { x });
    }
    match u {
        ExtendedField::Sum(terms) => {
            let mut acc = 0.0;
            for (c, f) in terms.iter() {
                if *c != 0.0 {
                    acc += c * frac_lap_n(ops, f, x)?;
                }
            }
            Ok(acc)
        }
        ExtendedField::Nodal(n) => nodal_frac_lap(ops, n, x),
        _ => generic_frac_lap(ops, u, x),
    }
}

fn generic_frac_lap(ops: &LimitOps, u: &ExtendedField, x: f64) -> Result<f64> {
    let s = ops.s;
    let spec = &ops.spec;
    let tol = tol_for(spec, field_scale(u, x));
    let ux = u.value(x);
    let w = spec.window * x.min(1.0 - x);
    let kinks = u.kinks();

    // window: -∫_0^w [u(x+h)+u(x-h)-2u(x)] h^{-1-2s} dh
    let second = |h: f64| u.value(x + h) + u.value(x - h) - 2.0 * ux;
    let window = match spec.subtraction {
        Subtraction::Linear => {
            let rule = quad::jacobi01(spec.nodes, 1.0 - 2.0 * s);
            let sum: f64 = rule
                .iter()
                .map(|&(t, wt)| {
                    let h = w * t;
                    wt * second(h) / (h * h)
                })
                .sum();
            sum * w.powf(2.0 - 2.0 * s)
        }
        Subtraction::Zero => {
            // below h0 the paired difference is lost to rounding; its
            // second-order Taylor value closes the gap
            let h0 = 1e-4 * w;
            let head = second(h0) / (h0 * h0) * h0.powf(2.0 - 2.0 * s) / (2.0 - 2.0 * s);
            let mut pts = vec![h0];
            while pts[pts.len() - 1] * 4.0 < w {
                let last = pts[pts.len() - 1];
                pts.push(last * 4.0);
            }
            pts.push(w);
            head + quad::adaptive(|h: f64| second(h) * h.powf(-1.0 - 2.0 * s), &pts, tol)
                .ok("principal-value window")?
        }
    };

    // outer pieces of (0,1)
    let outer = |y: f64| (ux - u.value(y)) * (x - y).abs().powf(-1.0 - 2.0 * s);
    let mut left_pts = vec![0.0, x - w];
    left_pts.extend(kinks.iter().copied().filter(|&k| k > 0.0 && k < x - w));
    let mut right_pts = vec![x + w, 1.0];
    right_pts.extend(kinks.iter().copied().filter(|&k| k > x + w && k < 1.0));
    let left = quad::adaptive(outer, &sorted_points(left_pts), tol).ok("outer left")?;
    let right = quad::adaptive(outer, &sorted_points(right_pts), tol).ok("outer right")?;

    let tails = if spec.analytic_tails {
        (ux - u.left_value()) / (2.0 * s * x.powf(2.0 * s))
            + (ux - u.right_value()) / (2.0 * s * (1.0 - x).powf(2.0 * s))
    } else {
        // ∫_d^∞ t^{-1-2s} dt with t = d/r
        let unit = quad::integrate(|r: f64| r.powf(2.0 * s - 1.0), 0.0, 1.0, Tol::new(spec.rel_tol, 0.0))
            .ok("exterior tail")?;
        (ux - u.left_value()) * unit * x.powf(-2.0 * s) + (ux - u.right_value()) * unit * (1.0 - x).powf(-2.0 * s)
    };
    Ok(ops.c1s * (left + right - window + tails))
}

fn nodal_frac_lap(ops: &LimitOps, n: &NodalField, x: f64) -> Result<f64> {
    let s = ops.s;
    let nodes = n.nodes();
    if nodes.iter().any(|&t| t == x) {
        return Err(Error::InvalidParameter(format!(
            "fractional Laplacian of a piecewise-linear field is not defined at the node {x}"
        )));
    }
    let e = 1.0 - 2.0 * s;
    let mut acc = 0.0;
    for k in 0..n.cells() {
        let (a, b) = (nodes[k], nodes[k + 1]);
        acc += n.slope(k) * ((b - x).abs().powf(e) - (a - x).abs().powf(e));
    }
    Ok(ops.c1s / (2.0 * s * (2.0 * s - 1.0)) * acc)
}

/// Nonlocal Neumann gradient `Dₙ[u](x)` for `x ∈ [0,1]`.
pub fn grad_n(ops: &LimitOps, u: &ExtendedField, x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::NonFinite("evaluation point"));
    }
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::InvalidParameter(format!("nonlocal gradient needs x in [0,1], got {x}")));
    }
    match u {
        ExtendedField::Sum(terms) => {
            let mut acc = 0.0;
            for (c, f) in terms.iter() {
                if *c != 0.0 {
                    acc += c * grad_n(ops, f, x)?;
                }
            }
            Ok(acc)
        }
        ExtendedField::Nodal(n) => Ok(nodal_grad(ops, n, x)),
        _ => generic_grad(ops, u, x),
    }
}

fn generic_grad(ops: &LimitOps, u: &ExtendedField, x: f64) -> Result<f64> {
    let s = ops.s;
    let spec = &ops.spec;
    let tol = tol_for(spec, field_scale(u, x));
    let ux = u.value(x);
    let kinks = u.kinks();
    let edge = u.endpoint_exponent();

    // ∫_0^{1-x} (u(x+h)-u(x)) h^{-2s} dh
    let right = if x < 1.0 {
        let e = if x == 0.0 { edge } else { 1.0 };
        let bps: Vec<f64> = kinks.iter().map(|&k| k - x).filter(|&h| h > 0.0).collect();
        quad::algebraic_left(
            |h: f64| (u.value(x + h) - ux) / h.powf(e),
            1.0 - x,
            e - 2.0 * s,
            spec.nodes,
            &bps,
            tol,
        )
        .ok("nonlocal gradient, right")?
    } else {
        0.0
    };
    // ∫_0^x (u(x)-u(x-h)) h^{-2s} dh
    let left = if x > 0.0 {
        let e = if x == 1.0 { edge } else { 1.0 };
        let bps: Vec<f64> = kinks.iter().map(|&k| x - k).filter(|&h| h > 0.0).collect();
        quad::algebraic_left(
            |h: f64| (ux - u.value(x - h)) / h.powf(e),
            x,
            e - 2.0 * s,
            spec.nodes,
            &bps,
            tol,
        )
        .ok("nonlocal gradient, left")?
    } else {
        0.0
    };
    let mut ext = 0.0;
    if x > 0.0 {
        ext -= (u.left_value() - ux) * x.powf(1.0 - 2.0 * s) / (2.0 * s - 1.0);
    }
    if x < 1.0 {
        ext += (u.right_value() - ux) * (1.0 - x).powf(1.0 - 2.0 * s) / (2.0 * s - 1.0);
    }
    Ok(ops.c1s / (2.0 * s) * (right + left + ext))
}

fn nodal_grad(ops: &LimitOps, n: &NodalField, x: f64) -> f64 {
    let s = ops.s;
    let nodes = n.nodes();
    let e = 2.0 - 2.0 * s;
    let anti = |t: f64| {
        let d = t - x;
        d.signum() * d.abs().powf(e)
    };
    let mut acc = 0.0;
    for k in 0..n.cells() {
        acc += n.slope(k) * (anti(nodes[k + 1]) - anti(nodes[k]));
    }
    ops.c1s / (2.0 * s * (2.0 * s - 1.0) * e) * acc
}

/// Breakpoints in the offset variable `z` for `x + εz` and `x - εz`.
fn offset_points(u: &ExtendedField, x: f64, eps: f64, upper: f64, paired: bool) -> Vec<f64> {
    let mut pts = vec![0.0];
    let mut p = 1e-4f64.min(upper);
    while p < upper {
        pts.push(p);
        p *= 4.0;
    }
    pts.push(upper);
    for k in u.kinks() {
        let z = (k - x) / eps;
        if z > 0.0 && z < upper {
            pts.push(z);
        }
        if paired && -z > 0.0 && -z < upper {
            pts.push(-z);
        }
    }
    sorted_points(pts)
}

fn check_eps(eps: f64) -> Result<()> {
    if !eps.is_finite() || eps <= 0.0 {
        return Err(Error::InvalidParameter(format!("eps must be positive, got {eps}")));
    }
    Ok(())
}

/// ε-level gradient `D_ε[ψ](x) = ε^{1-2s} ∫ z F₀(z) (ψ̃(x+εz) - ψ(x)) dz`, `x ∈ [0,1]`.
pub fn grad_eps(model: &Model, psi: &ExtendedField, x: f64, eps: f64) -> Result<f64> {
    check_eps(eps)?;
    if !x.is_finite() || !(0.0..=1.0).contains(&x) {
        return Err(Error::InvalidParameter(format!("ε-gradient needs x in [0,1], got {x}")));
    }
    if let ExtendedField::Sum(terms) = psi {
        let mut acc = 0.0;
        for (c, f) in terms.iter() {
            if *c != 0.0 {
                acc += c * grad_eps(model, f, x, eps)?;
            }
        }
        return Ok(acc);
    }
    let k = &model.kernels;
    let s = model.params.s;
    let tol = tol_for(&model.quadrature, field_scale(psi, x));
    let ux = psi.value(x);
    let zl = x / eps;
    let zr = (1.0 - x) / eps;
    let zs = zl.min(zr);
    let paired = if zs > 0.0 {
        quad::adaptive(
            |z: f64| k.abs_z_f0(z) * (psi.value(x + eps * z) - psi.value(x - eps * z)),
            &offset_points(psi, x, eps, zs, true),
            tol,
        )
        .ok("ε-gradient, paired")?
    } else {
        0.0
    };
    let one_sided = if zr > zl {
        let pts: Vec<f64> = offset_points(psi, x, eps, zr, false).into_iter().filter(|&z| z >= zl).collect();
        let pts = sorted_points([vec![zl], pts].concat());
        quad::adaptive(|z: f64| k.abs_z_f0(z) * (psi.value(x + eps * z) - ux), &pts, tol).ok("ε-gradient, right")?
    } else if zl > zr {
        let pts: Vec<f64> = offset_points(psi, x, eps, zl, true).into_iter().filter(|&z| z >= zr).collect();
        let pts = sorted_points([vec![zr], pts].concat());
        -quad::adaptive(|z: f64| k.abs_z_f0(z) * (psi.value(x - eps * z) - ux), &pts, tol).ok("ε-gradient, left")?
    } else {
        0.0
    };
    let tails = (psi.right_value() - ux) * k.first_moment_beyond(zr) - (psi.left_value() - ux) * k.first_moment_beyond(zl);
    Ok(eps.powf(1.0 - 2.0 * s) * (paired + one_sided + tails))
}

/// ε-level generator `𝓛^ε[ψ](x) = ε^{-2s} ∫ F₁(z) (ψ̃(x+εz) - ψ(x)) dz`, `x ∈ [0,1]`.
pub fn l_eps(model: &Model, psi: &ExtendedField, x: f64, eps: f64) -> Result<f64> {
    check_eps(eps)?;
    if !x.is_finite() || !(0.0..=1.0).contains(&x) {
        return Err(Error::InvalidParameter(format!("ε-generator needs x in [0,1], got {x}")));
    }
    if let ExtendedField::Sum(terms) = psi {
        let mut acc = 0.0;
        for (c, f) in terms.iter() {
            if *c != 0.0 {
                acc += c * l_eps(model, f, x, eps)?;
            }
        }
        return Ok(acc);
    }
    let k = &model.kernels;
    let s = model.params.s;
    let tol = tol_for(&model.quadrature, field_scale(psi, x));
    let ux = psi.value(x);
    let zl = x / eps;
    let zr = (1.0 - x) / eps;
    let zs = zl.min(zr);
    let paired = if zs > 0.0 {
        quad::adaptive(
            |z: f64| {
                if z == 0.0 {
                    0.0
                } else {
                    k.f1(z) * (psi.value(x + eps * z) + psi.value(x - eps * z) - 2.0 * ux)
                }
            },
            &offset_points(psi, x, eps, zs, true),
            tol,
        )
        .ok("ε-generator, paired")?
    } else {
        0.0
    };
    let one_sided = if zr > zl {
        let pts: Vec<f64> = offset_points(psi, x, eps, zr, false).into_iter().filter(|&z| z >= zl).collect();
        let pts = sorted_points([vec![zl], pts].concat());
        quad::adaptive(
            |z: f64| if z == 0.0 { 0.0 } else { k.f1(z) * (psi.value(x + eps * z) - ux) },
            &pts,
            tol,
        )
        .ok("ε-generator, right")?
    } else if zl > zr {
        let pts: Vec<f64> = offset_points(psi, x, eps, zl, true).into_iter().filter(|&z| z >= zr).collect();
        let pts = sorted_points([vec![zr], pts].concat());
        quad::adaptive(
            |z: f64| if z == 0.0 { 0.0 } else { k.f1(z) * (psi.value(x - eps * z) - ux) },
            &pts,
            tol,
        )
        .ok("ε-generator, left")?
    } else {
        0.0
    };
    let tails = (psi.right_value() - ux) * k.f1_mass_beyond(zr) + (psi.left_value() - ux) * k.f1_mass_beyond(zl);
    Ok(eps.powf(-2.0 * s) * (paired + one_sided + tails))
}

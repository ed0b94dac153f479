//! Cutoff functions, boundary-corrected test functions and the kinetic test
//! functions obtained by integrating along free-flight paths.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::{ExtendedField, Profile};
use crate::model::Model;
use crate::nonlocal_ops::{grad_eps, grad_n, LimitOps};
use crate::quad::{self, Tol};

/// `exp(-1/t)` for `t > 0`, zero otherwise.
fn flat(t: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else {
        (-1.0 / t).exp()
    }
}

fn flat_prime(t: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else {
        (-1.0 / t).exp() / (t * t)
    }
}

/// Smooth step equal to 1 on `[0, plateau]` and 0 on `[support, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cutoff {
    pub plateau: f64,
    pub support: f64,
}

impl Default for Cutoff {
    fn default() -> Self {
        Cutoff {
            plateau: 0.125,
            support: 0.375,
        }
    }
}

impl Profile for Cutoff {
    fn value(&self, x: f64) -> f64 {
        let t = (x - self.plateau) / (self.support - self.plateau);
        if t <= 0.0 {
            return 1.0;
        }
        if t >= 1.0 {
            return 0.0;
        }
        let (a, b) = (flat(1.0 - t), flat(t));
        a / (a + b)
    }

    fn derivative(&self, x: f64) -> f64 {
        let w = self.support - self.plateau;
        let t = (x - self.plateau) / w;
        if t <= 0.0 || t >= 1.0 {
            return 0.0;
        }
        let (a, b) = (flat(1.0 - t), flat(t));
        let (da, db) = (-flat_prime(1.0 - t), flat_prime(t));
        (da * b - a * db) / ((a + b) * (a + b)) / w
    }
}

impl Cutoff {
    pub fn field(&self) -> ExtendedField {
        ExtendedField::profile(*self)
    }

    /// `x ↦ χ(1-x)`.
    pub fn mirrored(&self) -> ExtendedField {
        self.field().reflect()
    }
}

pub fn build_cutoff(plateau: f64, support: f64) -> Result<Cutoff> {
    if !(plateau > 0.0 && plateau < support && support < 0.5) {
        return Err(Error::InvalidParameter(format!(
            "cutoff radii must satisfy 0 < r0 < r1 < 1/2, got r0={plateau}, r1={support}"
        )));
    }
    Ok(Cutoff { plateau, support })
}

/// Nonlocal gradient of the cutoff at both walls; errors when they coincide.
pub fn cutoff_gradients(ops: &LimitOps, chi: &Cutoff) -> Result<(f64, f64)> {
    let f = chi.field();
    let (g0, g1) = (grad_n(ops, &f, 0.0)?, grad_n(ops, &f, 1.0)?);
    if (g0 - g1).abs() <= 1e-8 * g0.abs().max(g1.abs()) {
        return Err(Error::DegenerateSystem {
            det: g0 * g0 - g1 * g1,
            scale: g0 * g0,
        });
    }
    Ok((g0, g1))
}

/// Coefficients `(c0, c1)` of `c0 χ + c1 χ(1-·)` cancelling `rhs` at both walls,
/// given `op[χ](0), op[χ](1), op[χ(1-·)](0), op[χ(1-·)](1)`.
pub(crate) fn solve_wall_system(m: [f64; 4], rhs: [f64; 2]) -> Result<(f64, f64)> {
    let [a, b, c, d] = m;
    // rows: wall 0 and wall 1; columns: χ and χ(1-·)
    let det = a * d - c * b;
    let scale = (a * d).abs().max((c * b).abs());
    if !det.is_finite() || det.abs() <= 1e-10 * scale || scale == 0.0 {
        return Err(Error::DegenerateSystem { det, scale });
    }
    let l0 = (-rhs[0] * d + rhs[1] * c) / det;
    let l1 = (-a * rhs[1] + b * rhs[0]) / det;
    Ok((l0, l1))
}

fn sup_norm(u: &ExtendedField) -> f64 {
    (0..=1000).map(|k| u.value(k as f64 / 1000.0).abs()).fold(0.0, f64::max)
}

/// `ψ^ε = ψ + λ₀ χ + λ₁ χ(1-·)` with vanishing ε-gradient at both walls.
#[derive(Debug, Clone)]
pub struct CorrectedTestFunction {
    pub base: ExtendedField,
    pub eps: f64,
    pub lambda0: f64,
    pub lambda1: f64,
    pub cutoff: Cutoff,
    pub composite: ExtendedField,
    /// `D_ε[ψ^ε]` at the two walls, evaluated on the flattened composite.
    pub residuals: [f64; 2],
}

pub fn correct(model: &Model, psi: &ExtendedField, eps: f64, chi: &Cutoff) -> Result<CorrectedTestFunction> {
    let (cf, cr) = (chi.field(), chi.mirrored());
    let m = [
        grad_eps(model, &cf, 0.0, eps)?,
        grad_eps(model, &cf, 1.0, eps)?,
        grad_eps(model, &cr, 0.0, eps)?,
        grad_eps(model, &cr, 1.0, eps)?,
    ];
    let d = [grad_eps(model, psi, 0.0, eps)?, grad_eps(model, psi, 1.0, eps)?];
    let (lambda0, lambda1) = solve_wall_system(m, d)?;
    let composite = ExtendedField::sum(vec![(1.0, psi.clone()), (lambda0, cf), (lambda1, cr)]);
    let flat = composite.flatten();
    let residuals = [grad_eps(model, &flat, 0.0, eps)?, grad_eps(model, &flat, 1.0, eps)?];
    let scale = sup_norm(psi).max(d[0].abs()).max(d[1].abs());
    let tolerance = 1e-8 * scale.max(f64::MIN_POSITIVE);
    let worst = residuals[0].abs().max(residuals[1].abs());
    if !(worst <= tolerance) {
        return Err(Error::ResidualTooLarge { residual: worst, tolerance });
    }
    Ok(CorrectedTestFunction {
        base: psi.clone(),
        eps,
        lambda0,
        lambda1,
        cutoff: *chi,
        composite,
        residuals,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct LambdaRow {
    pub eps: f64,
    pub lambda0: f64,
    pub lambda1: f64,
    pub res0: f64,
    pub res1: f64,
}

pub fn lambda_table(model: &Model, psi: &ExtendedField, chi: &Cutoff, eps: &[f64]) -> Result<Vec<LambdaRow>> {
    eps.iter()
        .map(|&e| {
            let c = correct(model, psi, e, chi)?;
            Ok(LambdaRow {
                eps: e,
                lambda0: c.lambda0,
                lambda1: c.lambda1,
                res0: c.residuals[0],
                res1: c.residuals[1],
            })
        })
        .collect()
}

/// `φ^ε(x,v) = ∫₀^∞ ν₀ e^{-ν₀ z} ψ̃(x + ε z v) dz`.
///
/// Split at the wall-exit time: beyond it the constant extension makes the
/// remaining integral `e^{-ν₀ z*} ψ(wall)` exactly.
pub fn phi_eps(model: &Model, psi: &ExtendedField, x: f64, v: f64, eps: f64) -> Result<f64> {
    if !eps.is_finite() || eps <= 0.0 {
        return Err(Error::InvalidParameter(format!("eps must be positive, got {eps}")));
    }
    if !x.is_finite() || !v.is_finite() {
        return Err(Error::NonFinite("phase-space point"));
    }
    let nu0 = model.params.nu0;
    let x = x.clamp(0.0, 1.0);
    let speed = eps * v;
    if speed == 0.0 {
        return Ok(psi.value(x));
    }
    let exit = if speed > 0.0 { (1.0 - x) / speed } else { x / -speed };
    let horizon = 45.0 / nu0;
    let end = exit.min(horizon);
    let mut pts = vec![0.0, end];
    for k in psi.kinks() {
        let z = (k - x) / speed;
        if z > 0.0 && z < end {
            pts.push(z);
        }
    }
    let mut p = end / 64.0;
    while p > 1e-3 * end.min(1.0 / nu0) {
        pts.push(p);
        p /= 8.0;
    }
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    let scale = [x, 0.0, 0.25, 0.5, 0.75, 1.0]
        .iter()
        .map(|&y| psi.value(y).abs())
        .fold(1e-300, f64::max);
    let head = quad::adaptive(
        |z: f64| nu0 * (-nu0 * z).exp() * psi.value(x + speed * z),
        &pts,
        Tol::new(1e-12, 1e-13 * scale),
    )
    .ok("kinetic test function")?;
    let tail = if exit <= horizon {
        (-nu0 * exit).exp() * psi.value(if speed > 0.0 { 1.0 } else { 0.0 })
    } else {
        0.0
    };
    Ok(head + tail)
}

/// Result of the limit-level correction with the nonlocal Neumann gradient.
#[derive(Debug, Clone)]
pub struct NeumannProjection {
    pub field: ExtendedField,
    pub mu0: f64,
    pub mu1: f64,
    pub residuals: [f64; 2],
}

/// `ψ + μ₀ χ + μ₁ χ(1-·)` with `Dₙ = 0` at both walls.
pub fn neumann_project(ops: &LimitOps, psi: &ExtendedField, chi: &Cutoff) -> Result<NeumannProjection> {
    let (cf, cr) = (chi.field(), chi.mirrored());
    let m = [
        grad_n(ops, &cf, 0.0)?,
        grad_n(ops, &cf, 1.0)?,
        grad_n(ops, &cr, 0.0)?,
        grad_n(ops, &cr, 1.0)?,
    ];
    let d = [grad_n(ops, psi, 0.0)?, grad_n(ops, psi, 1.0)?];
    let (mu0, mu1) = solve_wall_system(m, d)?;
    let field = ExtendedField::sum(vec![(1.0, psi.clone()), (mu0, cf), (mu1, cr)]);
    let flat = field.flatten();
    let residuals = [grad_n(ops, &flat, 0.0)?, grad_n(ops, &flat, 1.0)?];
    let scale = sup_norm(psi).max(d[0].abs()).max(d[1].abs());
    let tolerance = 1e-8 * scale.max(f64::MIN_POSITIVE);
    let worst = residuals[0].abs().max(residuals[1].abs());
    if !(worst <= tolerance) {
        return Err(Error::ResidualTooLarge { residual: worst, tolerance });
    }
    Ok(NeumannProjection {
        field,
        mu0,
        mu1,
        residuals,
    })
}

//! Heavy-tailed equilibrium `F(v) = γ/(1+|v|^{1+2s})`, its scalar constants,
//! the collision kernels `F₀`, `F₁` and the velocity samplers.

mod kernels;
mod sampling;

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma as gamma_fn;

use crate::error::{Error, Result};
use crate::quad::{self, Tol};

pub use kernels::{KernelSettings, KernelTable, Kernels};
pub use sampling::{BoundarySampler, VelocitySampler, SAMPLER_NODES, SAMPLER_VMAX};

/// Tail exponent `s` and collision frequency `ν₀`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub s: f64,
    pub nu0: f64,
}

impl ModelParams {
    pub fn new(s: f64, nu0: f64) -> Result<Self> {
        if !s.is_finite() || s <= 0.5 || s >= 1.0 {
            return Err(Error::InvalidParameter(format!("s must lie in (1/2,1), got {s}")));
        }
        if !nu0.is_finite() || nu0 <= 0.0 {
            return Err(Error::InvalidParameter(format!("nu0 must be positive, got {nu0}")));
        }
        Ok(ModelParams { s, nu0 })
    }

    /// `1 + 2s`, the decay exponent of `F`.
    pub fn tail_exponent(&self) -> f64 {
        1.0 + 2.0 * self.s
    }

    /// Normalization of the concrete family.
    pub fn gamma(&self) -> f64 {
        let p = self.tail_exponent();
        p * (PI / p).sin() / (2.0 * PI)
    }

    pub fn equilibrium(&self) -> Equilibrium {
        Equilibrium {
            gamma: self.gamma(),
            p: self.tail_exponent(),
        }
    }
}

/// The velocity density.
#[derive(Debug, Clone, Copy)]
pub struct Equilibrium {
    gamma: f64,
    p: f64,
}

impl Equilibrium {
    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// `F(v)`; total, even, integrates to one.
    #[inline]
    pub fn density(&self, v: f64) -> f64 {
        self.gamma / (1.0 + v.abs().powf(self.p))
    }
}

/// Every scalar constant of the model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstantSet {
    pub s: f64,
    pub nu0: f64,
    pub gamma: f64,
    pub gamma0: f64,
    pub gamma1: f64,
    /// Boundary flux normalization.
    pub c0: f64,
    /// Constant of the whole-line fractional Laplacian.
    pub c1s: f64,
    /// Diffusivity of the limit equation.
    pub kappa: f64,
    /// `(-Δ)^s [x^s (1-x)^s] = 1/kappa_s` on (0,1).
    pub kappa_s: f64,
}

impl ConstantSet {
    /// Factor relating the ε-gradient to the nonlocal Neumann gradient.
    pub fn flux_factor(&self) -> f64 {
        2.0 * self.s * self.gamma0 / self.c1s
    }
}

/// `c_{1,s} = 2^{2s} Γ(1/2+s) / (√π |Γ(-s)|)`.
pub fn frac_laplacian_constant(s: f64) -> f64 {
    // |Γ(-s)| = Γ(1-s)/s for s in (0,1)
    let abs_gamma_neg = gamma_fn(1.0 - s) / s;
    2f64.powf(2.0 * s) * gamma_fn(0.5 + s) / (PI.sqrt() * abs_gamma_neg)
}

pub fn build_constants(params: &ModelParams) -> Result<ConstantSet> {
    build_constants_with(params, Tol::new(1e-12, 1e-15))
}

pub fn build_constants_with(params: &ModelParams, tol: Tol) -> Result<ConstantSet> {
    let ModelParams { s, nu0 } = *params;
    let p = params.tail_exponent();
    let gamma = params.gamma();
    let scale = gamma * nu0.powf(1.0 - 2.0 * s);
    let gamma0 = scale * gamma_fn(2.0 * s);
    let gamma1 = scale * gamma_fn(2.0 * s + 1.0);
    // ∫_0^∞ w/(1+w^p) dw = (π/p)/sin(2π/p)
    let c0 = p * (2.0 * PI / p).sin() / (gamma * PI);
    let c1s = frac_laplacian_constant(s);
    let kappa = gamma1 / c1s;
    let torsion = torsion_laplacian_at_half(s, c1s, tol)?;
    let out = ConstantSet {
        s,
        nu0,
        gamma,
        gamma0,
        gamma1,
        c0,
        c1s,
        kappa,
        kappa_s: 1.0 / torsion,
    };
    for (name, v) in [
        ("gamma0", gamma0),
        ("gamma1", gamma1),
        ("c0", c0),
        ("c1s", c1s),
        ("kappa_s", out.kappa_s),
    ] {
        if !v.is_finite() || v <= 0.0 {
            return Err(Error::InvalidParameter(format!("constant {name} evaluated to {v}")));
        }
    }
    Ok(out)
}

/// Brute-force `(-Δ)^s` of `x₊^s (1-x)₊^s` at `x = 1/2`.
///
/// Equals `c_{1,s} (2 I + 1/s)` with `I = ∫_0^1 [1-(1-u²)^s] u^{-1-2s} du`.
fn torsion_laplacian_at_half(s: f64, c1s: f64, tol: Tol) -> Result<f64> {
    // [0, 1/2]: u^{1-2s} times a smooth quotient
    let q1 = |u: f64| {
        if u == 0.0 {
            s
        } else {
            -(s * (-u * u).ln_1p()).exp_m1() / (u * u)
        }
    };
    let a = quad::algebraic_left(q1, 0.5, 1.0 - 2.0 * s, 24, &[], tol).ok("torsion integral, inner half")?;
    // [1/2, 1] in t = 1-u: u^{-1-2s} minus t^s (2-t)^s (1-t)^{-1-2s}
    let q2 = |t: f64| (2.0 - t).powf(s) * (1.0 - t).powf(-1.0 - 2.0 * s);
    let b = quad::algebraic_left(q2, 0.5, s, 24, &[], tol).ok("torsion integral, outer half")?;
    let i = a + (2f64.powf(2.0 * s) - 1.0) / (2.0 * s) - b;
    Ok(c1s * (2.0 * i + 1.0 / s))
}

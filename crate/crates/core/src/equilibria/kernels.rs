//! Collision kernels `F₀`, `F₁`.
//!
//! With `τ = z/v` the kernels become Laplace-type moments of `F`:
//! `F₀(z) = (ν₀/z) G₀(ν₀z)`, `F₁(z) = ν₀² G₋₁(ν₀z)` where
//! `G_b(a) = ∫_0^∞ e^{-a/v} F(v) v^b dv`. The first moment of `zF₀` beyond `Z`
//! is `G₁(ν₀Z)` and the mass of `F₁` beyond `Z` is `ν₀ G₀(ν₀Z)`, so the three
//! tables `G₋₁, G₀, G₁` serve every operator.

use std::f64::consts::LN_10;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma as gamma_fn;

use super::{Equilibrium, ModelParams};
use crate::error::{Error, Result};
use crate::quad::{self, Tol};

/// Table construction settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSettings {
    pub points_per_decade: usize,
    pub z_min: f64,
    pub z_cut: f64,
    pub rel_tol: f64,
}

impl Default for KernelSettings {
    fn default() -> Self {
        KernelSettings {
            points_per_decade: 2048,
            z_min: 1e-6,
            z_cut: 1e3,
            rel_tol: 1e-12,
        }
    }
}

/// Log-log table of one moment `G_b` on `a ∈ [a_min, a_cut]`.
#[derive(Debug, Clone)]
pub struct KernelTable {
    b: i32,
    ln_a0: f64,
    step: f64,
    ln_values: Vec<f64>,
    a_min: f64,
    a_cut: f64,
    gamma: f64,
    /// `G_b(0)` where finite.
    origin: f64,
    /// `(exponent, γ Γ(..))` pairs of the large-`a` series.
    series: [(f64, f64); 5],
}

impl KernelTable {
    fn build(b: i32, params: &ModelParams, a_min: f64, a_cut: f64, settings: &KernelSettings) -> Result<Self> {
        let f = params.equilibrium();
        let p = params.tail_exponent();
        let step = LN_10 / settings.points_per_decade as f64;
        let ln_a0 = a_min.ln();
        let count = ((a_cut.ln() - ln_a0) / step).ceil() as usize + 1;
        let tol = Tol::new(settings.rel_tol, 0.0);
        let mut ln_values = Vec::with_capacity(count);
        for k in 0..count {
            let a = (ln_a0 + k as f64 * step).exp();
            let g = moment_direct(&f, p, b, a, tol)?;
            if !(g > 0.0 && g.is_finite()) {
                return Err(Error::Quadrature(format!("kernel moment {b} at {a}: {g}")));
            }
            ln_values.push(g.ln());
        }
        let origin = match b {
            0 => 0.5,
            1 => {
                // ∫_0^∞ v F(v) dv = (γ π/p)/sin(2π/p)
                f.gamma() * (std::f64::consts::PI / p) / (2.0 * std::f64::consts::PI / p).sin()
            }
            _ => f64::INFINITY,
        };
        let mut series = [(0.0, 0.0); 5];
        for (k, slot) in series.iter_mut().enumerate() {
            let e = (k + 1) as f64 * p;
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            *slot = (b as f64 + 1.0 - e, sign * f.gamma() * gamma_fn(e - b as f64 - 1.0));
        }
        Ok(KernelTable {
            series,
            b,
            ln_a0,
            step,
            ln_values,
            a_min,
            a_cut: (ln_a0 + (count - 1) as f64 * step).exp(),
            gamma: f.gamma(),
            origin,
        })
    }

    /// `G_b(a)` for `a > 0`.
    #[inline]
    pub fn eval(&self, a: f64) -> f64 {
        if a > self.a_cut {
            return self.asymptotic(a);
        }
        if a < self.a_min {
            let g_min = self.ln_values[0].exp();
            return if self.b == -1 {
                g_min + self.gamma * (self.a_min / a).ln()
            } else {
                self.origin + (g_min - self.origin) * a / self.a_min
            };
        }
        let t = (a.ln() - self.ln_a0) / self.step;
        let n = self.ln_values.len();
        let k = (t.floor() as isize).clamp(1, n as isize - 3) as usize;
        let x = t - k as f64;
        // four-point Lagrange on nodes k-1..k+2 at offsets -1,0,1,2
        let y = &self.ln_values[k - 1..k + 3];
        let l0 = -x * (x - 1.0) * (x - 2.0) / 6.0;
        let l1 = (x + 1.0) * (x - 1.0) * (x - 2.0) / 2.0;
        let l2 = -(x + 1.0) * x * (x - 2.0) / 2.0;
        let l3 = (x + 1.0) * x * (x - 1.0) / 6.0;
        (l0 * y[0] + l1 * y[1] + l2 * y[2] + l3 * y[3]).exp()
    }

    /// Large-`a` series `γ Σ_k (-1)^k a^{b+1-(k+1)p} Γ((k+1)p-b-1)`.
    fn asymptotic(&self, a: f64) -> f64 {
        self.series.iter().map(|&(e, c)| c * a.powf(e)).sum()
    }
}

/// `G_b(a)` by direct quadrature in `w = ln v` with an analytic far tail.
pub(crate) fn moment_direct(f: &Equilibrium, p: f64, b: i32, a: f64, tol: Tol) -> Result<f64> {
    let bf = b as f64;
    let gamma = f.gamma();
    let v_far = 1e4 * a.max(1.0);
    // ∫_{v_far}^∞ e^{-a/v} F(v) v^b dv, both factors expanded
    let mut tail = 0.0;
    for k in 0..5 {
        let sk = if k % 2 == 0 { 1.0 } else { -1.0 };
        let mut coeff = 1.0;
        for m in 0..8 {
            let e = (k + 1) as f64 * p + m as f64 - bf - 1.0;
            tail += sk * coeff * v_far.powf(-e) / e;
            coeff *= -a / (m as f64 + 1.0);
        }
    }
    tail *= gamma;
    let w_lo = (a / 60.0).ln();
    let w_hi = v_far.ln();
    let mut pts = vec![w_lo, a.ln(), 0.0, w_hi];
    pts.retain(|w| *w >= w_lo && *w <= w_hi);
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    let body = quad::adaptive(
        |w: f64| {
            let v = w.exp();
            (-a / v).exp() * f.density(v) * (w * (bf + 1.0)).exp()
        },
        &pts,
        tol,
    )
    .ok("kernel moment")?;
    Ok(body + tail)
}

/// The three moment tables plus their parameters.
#[derive(Debug, Clone)]
pub struct Kernels {
    params: ModelParams,
    settings: KernelSettings,
    g_m1: KernelTable,
    g_0: KernelTable,
    g_1: KernelTable,
    gamma0: f64,
    gamma1: f64,
    tail_bound: [f64; 2],
}

impl Kernels {
    pub fn build(params: &ModelParams, settings: KernelSettings) -> Result<Self> {
        if settings.points_per_decade < 16 || !(settings.z_min > 0.0) || settings.z_cut <= settings.z_min {
            return Err(Error::InvalidParameter("kernel table settings out of range".into()));
        }
        let nu0 = params.nu0;
        let a_min = settings.z_min * nu0;
        // the asymptotic series needs a = ν₀z of at least a few hundred
        let a_cut = (settings.z_cut * nu0).max(300.0);
        let g_m1 = KernelTable::build(-1, params, a_min, a_cut, &settings)?;
        let g_0 = KernelTable::build(0, params, a_min, a_cut, &settings)?;
        let g_1 = KernelTable::build(1, params, a_min, a_cut, &settings)?;
        let scale = params.gamma() * nu0.powf(1.0 - 2.0 * params.s);
        let mut k = Kernels {
            params: *params,
            settings,
            g_m1,
            g_0,
            g_1,
            gamma0: scale * gamma_fn(2.0 * params.s),
            gamma1: scale * gamma_fn(2.0 * params.s + 1.0),
            tail_bound: [0.0; 2],
        };
        // measured constant in |F_i - γ_i z^{-p}| ≤ C z^{-1-4s}, z ≥ 1
        for i in 0..2 {
            let mut c: f64 = 0.0;
            let mut z: f64 = 1.0;
            while z <= 10.0 * k.z_cut() {
                c = c.max(k.tail_deviation(i, z));
                z *= 1.05;
            }
            k.tail_bound[i] = c;
        }
        Ok(k)
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn settings(&self) -> &KernelSettings {
        &self.settings
    }

    /// Offset beyond which the asymptotic tail model is used.
    pub fn z_cut(&self) -> f64 {
        self.g_0.a_cut / self.params.nu0
    }

    /// Stored constant `C` of the tail estimate for kernel `i`.
    pub fn tail_bound(&self, i: usize) -> f64 {
        self.tail_bound[i]
    }

    pub fn tail_constant(&self, i: usize) -> f64 {
        if i == 0 {
            self.gamma0
        } else {
            self.gamma1
        }
    }

    /// `|z|^{1+4s} |F_i(z) - γ_i |z|^{-1-2s}|`.
    pub fn tail_deviation(&self, i: usize, z: f64) -> f64 {
        let s = self.params.s;
        let z = z.abs();
        let model = self.tail_constant(i) * z.powf(-1.0 - 2.0 * s);
        z.powf(1.0 + 4.0 * s) * (self.kernel(i, z) - model).abs()
    }

    /// Checked evaluation of `F_i(z)`.
    pub fn eval_kernel(&self, i: usize, z: f64) -> Result<f64> {
        if !z.is_finite() {
            return Err(Error::NonFinite("kernel offset"));
        }
        if i > 1 {
            return Err(Error::InvalidParameter(format!("kernel index must be 0 or 1, got {i}")));
        }
        Ok(self.kernel(i, z))
    }

    #[inline]
    pub fn kernel(&self, i: usize, z: f64) -> f64 {
        let z = z.abs();
        if z == 0.0 {
            return f64::INFINITY;
        }
        let nu0 = self.params.nu0;
        if i == 0 {
            nu0 * self.g_0.eval(nu0 * z) / z
        } else {
            nu0 * nu0 * self.g_m1.eval(nu0 * z)
        }
    }

    /// `|z| F₀(z)` (the odd factor `sign z` is left to the caller).
    #[inline]
    pub fn abs_z_f0(&self, z: f64) -> f64 {
        let nu0 = self.params.nu0;
        nu0 * self.g_0.eval(nu0 * z.abs())
    }

    #[inline]
    pub fn f1(&self, z: f64) -> f64 {
        self.kernel(1, z)
    }

    /// `∫_Z^∞ z F₀(z) dz` for `Z ≥ 0`.
    #[inline]
    pub fn first_moment_beyond(&self, big_z: f64) -> f64 {
        let a = self.params.nu0 * big_z;
        if a == 0.0 {
            self.g_1.origin
        } else {
            self.g_1.eval(a)
        }
    }

    /// `∫_Z^∞ F₁(z) dz = Z F₀(Z)` for `Z ≥ 0`.
    #[inline]
    pub fn f1_mass_beyond(&self, big_z: f64) -> f64 {
        let nu0 = self.params.nu0;
        let a = nu0 * big_z;
        if a == 0.0 {
            0.5 * nu0
        } else {
            nu0 * self.g_0.eval(a)
        }
    }
}

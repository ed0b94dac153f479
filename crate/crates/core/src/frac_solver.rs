//! Galerkin discretization of `(-Δ)ₙˢ` with hat functions whose endpoint
//! members extend by constants, so the nonlocal Neumann condition is natural.
//!
//! With `C = c₁ₛ / (2s(2s-1))` the Gagliardo form of a field with derivative
//! supported in [0,1] is `C ∬ u'(x) u'(y) |x-y|^{1-2s}`, so on a uniform grid
//! every stiffness entry is a finite difference of
//! `G(t) = |t|^{3-2s} / ((2-2s)(3-2s))` at integer or half-integer offsets.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::equilibria::{build_constants, frac_laplacian_constant, ModelParams};
use crate::error::{Error, Result};
use crate::field::{uniform_nodes, Bump, ExtendedField, NodalField, Torsion};
use crate::fit::{fit_power_law, LineFit};
use crate::nonlocal_ops::{frac_lap_n, grad_n, LimitOps};
use crate::quad;

/// Offsets at or beyond which differences of `G` come from the B-spline
/// integral instead of direct differencing.
const SPLINE_SWITCH: f64 = 4.0;

struct DifferenceKernel {
    s: f64,
    norm: f64,
}

impl DifferenceKernel {
    fn new(s: f64) -> Self {
        DifferenceKernel {
            s,
            norm: 1.0 / ((2.0 - 2.0 * s) * (3.0 - 2.0 * s)),
        }
    }

    fn g(&self, t: f64) -> f64 {
        t.abs().powf(3.0 - 2.0 * self.s) * self.norm
    }

    /// `k`-th derivative of `G` for `k ∈ {2, 3, 4}`, `t ≠ 0`.
    fn g_derivative(&self, k: usize, t: f64) -> f64 {
        let s = self.s;
        match k {
            2 => t.abs().powf(1.0 - 2.0 * s),
            3 => (1.0 - 2.0 * s) * t.signum() * t.abs().powf(-2.0 * s),
            4 => 2.0 * s * (2.0 * s - 1.0) * t.abs().powf(-1.0 - 2.0 * s),
            _ => unreachable!("only differences of order 2 to 4 are needed"),
        }
    }

    fn direct(&self, k: usize, c: f64) -> f64 {
        let half = k as f64 / 2.0;
        (0..=k)
            .map(|j| {
                let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
                sign * binomial(k, j) * self.g(c + half - j as f64)
            })
            .sum()
    }

    /// `Δᵏ G(c) = ∫ Bₖ(t) G⁽ᵏ⁾(c - t) dt` with the centered cardinal B-spline.
    fn spline(&self, k: usize, c: f64) -> f64 {
        let rule = quad::legendre01(16);
        let half = k as f64 / 2.0;
        let mut acc = 0.0;
        for piece in 0..k {
            for &(u, w) in rule.iter() {
                let x = piece as f64 + u;
                acc += w * cardinal_bspline(k, x) * self.g_derivative(k, c - (x - half));
            }
        }
        acc
    }

    fn difference(&self, k: usize, c: f64) -> f64 {
        if c.abs() >= SPLINE_SWITCH {
            self.spline(k, c)
        } else {
            self.direct(k, c)
        }
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Cardinal B-spline of order `k` on `[0, k]`.
fn cardinal_bspline(k: usize, x: f64) -> f64 {
    if x <= 0.0 || x >= k as f64 {
        return 0.0;
    }
    let fact: f64 = (1..k).map(|i| i as f64).product();
    (0..=k)
        .map(|j| {
            let d = x - j as f64;
            if d <= 0.0 {
                0.0
            } else {
                let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
                sign * binomial(k, j) * d.powi(k as i32 - 1)
            }
        })
        .sum::<f64>()
        / fact
}

/// Stiffness and mass arrays on the uniform grid with `n` cells.
#[derive(Debug, Clone)]
pub struct OperatorMatrices {
    pub s: f64,
    pub c1s: f64,
    pub nodes: Vec<f64>,
    pub stiffness: DMatrix<f64>,
    pub mass: DMatrix<f64>,
    /// Relative deviation of the energy of `u(x) = x` from its closed form.
    pub energy_check: f64,
    /// Relative disagreement of the two difference formulas at the switch offset.
    pub switch_check: f64,
}

impl OperatorMatrices {
    pub fn cells(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn step(&self) -> f64 {
        1.0 / self.cells() as f64
    }

    /// `M u` using the tridiagonal structure.
    pub fn mass_apply(&self, u: &DVector<f64>) -> DVector<f64> {
        let n = self.cells();
        let h = self.step();
        let mut out = DVector::zeros(n + 1);
        for i in 0..=n {
            let diag = if i == 0 || i == n { h / 3.0 } else { 2.0 * h / 3.0 };
            let mut v = diag * u[i];
            if i > 0 {
                v += h / 6.0 * u[i - 1];
            }
            if i < n {
                v += h / 6.0 * u[i + 1];
            }
            out[i] = v;
        }
        out
    }

    /// `∫ u` of the piecewise-linear field.
    pub fn integral(&self, u: &[f64]) -> f64 {
        let h = self.step();
        let n = self.cells();
        h * (0.5 * (u[0] + u[n]) + u[1..n].iter().sum::<f64>())
    }

    pub fn energy(&self, u: &[f64]) -> f64 {
        let v = DVector::from_column_slice(u);
        v.dot(&(&self.stiffness * &v))
    }

    /// `∫ f φᵢ` by four-point Gauss on each cell.
    pub fn load_vector(&self, f: &(dyn Fn(f64) -> f64 + Sync)) -> DVector<f64> {
        let n = self.cells();
        let h = self.step();
        let rule = quad::legendre01(4);
        let per_cell: Vec<(f64, f64)> = (0..n)
            .into_par_iter()
            .map(|k| {
                let a = self.nodes[k];
                let mut left = 0.0;
                let mut right = 0.0;
                for &(t, w) in rule.iter() {
                    let v = f(a + h * t) * w * h;
                    left += v * (1.0 - t);
                    right += v * t;
                }
                (left, right)
            })
            .collect();
        let mut b = DVector::zeros(n + 1);
        for (k, (l, r)) in per_cell.into_iter().enumerate() {
            b[k] += l;
            b[k + 1] += r;
        }
        b
    }
}

pub fn assemble(n: usize, s: f64) -> Result<OperatorMatrices> {
    if n < 8 {
        return Err(Error::InvalidParameter(format!("the grid needs at least 8 cells, got {n}")));
    }
    ModelParams::new(s, 1.0)?;
    let kernel = DifferenceKernel::new(s);
    let c1s = frac_laplacian_constant(s);
    let h = 1.0 / n as f64;
    let scale = c1s / (2.0 * s * (2.0 * s - 1.0)) * h.powf(1.0 - 2.0 * s);

    let switch_check = [3usize, 4]
        .iter()
        .map(|&k| {
            let c = SPLINE_SWITCH + 0.5 * (k % 2) as f64;
            let (a, b) = (kernel.direct(k, c), kernel.spline(k, c));
            ((a - b) / b).abs()
        })
        .fold(0.0, f64::max);
    if !(switch_check <= 1e-9) {
        return Err(Error::Assembly(format!(
            "difference formulas disagree by {switch_check:.2e} at the switch offset"
        )));
    }

    // Toeplitz data: interior pairs, endpoint–interior pairs, endpoint pairs
    let fourth: Vec<f64> = (0..=n).map(|m| -kernel.difference(4, m as f64)).collect();
    let third: Vec<f64> = (0..=n).map(|j| kernel.difference(3, j as f64 - 0.5)).collect();
    let second = |d: f64| kernel.difference(2, d);
    let corner_same = second(0.0);
    let corner_cross = -second((n - 1) as f64);

    let mut a = DMatrix::zeros(n + 1, n + 1);
    for i in 1..n {
        for j in 1..n {
            a[(i, j)] = scale * fourth[i.abs_diff(j)];
        }
        a[(0, i)] = scale * third[i];
        a[(i, 0)] = a[(0, i)];
        a[(n, i)] = scale * third[n - i];
        a[(i, n)] = a[(n, i)];
    }
    a[(0, 0)] = scale * corner_same;
    a[(n, n)] = scale * corner_same;
    a[(0, n)] = scale * corner_cross;
    a[(n, 0)] = a[(0, n)];

    let mut m = DMatrix::zeros(n + 1, n + 1);
    for i in 0..=n {
        m[(i, i)] = if i == 0 || i == n { h / 3.0 } else { 2.0 * h / 3.0 };
        if i < n {
            m[(i, i + 1)] = h / 6.0;
            m[(i + 1, i)] = h / 6.0;
        }
    }

    let nodes = uniform_nodes(n);
    let mut ops = OperatorMatrices {
        s,
        c1s,
        nodes,
        stiffness: a,
        mass: m,
        energy_check: 0.0,
        switch_check,
    };
    let exact = c1s / (2.0 * s * (2.0 * s - 1.0)) * 2.0 / ((2.0 - 2.0 * s) * (3.0 - 2.0 * s));
    let e = ops.energy(&ops.nodes.clone());
    ops.energy_check = ((e - exact) / exact).abs();
    if !(ops.energy_check <= 1e-9) {
        return Err(Error::Assembly(format!(
            "energy of the linear field is off by {:.2e}",
            ops.energy_check
        )));
    }
    Ok(ops)
}

pub enum Forcing<'a> {
    Nodal(&'a [f64]),
    Function(&'a (dyn Fn(f64) -> f64 + Sync)),
}

impl Forcing<'_> {
    fn load(&self, ops: &OperatorMatrices) -> Result<DVector<f64>> {
        match self {
            Forcing::Nodal(g) => {
                if g.len() != ops.nodes.len() {
                    return Err(Error::InvalidParameter(format!(
                        "forcing has {} values for {} nodes",
                        g.len(),
                        ops.nodes.len()
                    )));
                }
                Ok(ops.mass_apply(&DVector::from_column_slice(g)))
            }
            Forcing::Function(f) => Ok(ops.load_vector(*f)),
        }
    }
}

#[derive(Debug, Clone)]
pub struct StationarySolution {
    pub values: Vec<f64>,
    /// `‖(λM + κA)u - b‖ / ‖b‖` after one refinement step.
    pub residual: f64,
    /// Nonlocal gradient of the discrete solution at both walls.
    pub wall_flux: [f64; 2],
}

/// Solves `(λM + κA) u = b` with `b` the Galerkin load of the forcing.
pub fn solve_stationary(ops: &OperatorMatrices, lambda: f64, kappa: f64, forcing: Forcing) -> Result<StationarySolution> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidParameter(format!("lambda must be positive, got {lambda}")));
    }
    if !(kappa > 0.0 && kappa.is_finite()) {
        return Err(Error::InvalidParameter(format!("kappa must be positive, got {kappa}")));
    }
    let b = forcing.load(ops)?;
    let system = &ops.mass * lambda + &ops.stiffness * kappa;
    let chol = system
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Tolerance("resolvent system is not positive definite".into()))?;
    let mut u = chol.solve(&b);
    // one refinement step, then a normwise backward-error check
    let r = &b - &system * &u;
    u += chol.solve(&r);
    let r = &system * &u - &b;
    let residual = r.norm() / b.norm().max(f64::MIN_POSITIVE);
    let backward = r.norm() / (system.norm() * u.norm() + b.norm()).max(f64::MIN_POSITIVE);
    if !(backward <= 1e-12) {
        return Err(Error::Tolerance(format!("resolvent backward error {backward:.2e} exceeds 1e-12")));
    }
    let values: Vec<f64> = u.iter().copied().collect();
    let field = ExtendedField::nodal(NodalField::new(ops.nodes.clone(), values.clone())?);
    let lim = LimitOps::new(ops.s);
    let wall_flux = [grad_n(&lim, &field, 0.0)?, grad_n(&lim, &field, 1.0)?];
    Ok(StationarySolution {
        values,
        residual,
        wall_flux,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TimeScheme {
    CrankNicolson,
    ImplicitEuler,
}

#[derive(Debug, Clone)]
pub struct Snapshot {
    pub time: f64,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Evolution {
    pub dt: f64,
    pub snapshots: Vec<Snapshot>,
    /// `∫u` after every step, starting with the initial value.
    pub mass: Vec<f64>,
    /// `uᵀAu` after every step, starting with the initial value.
    pub energy: Vec<f64>,
}

impl Evolution {
    /// Largest relative change of the mass over a single step.
    pub fn max_mass_step(&self) -> f64 {
        let m0 = self.mass[0].abs().max(f64::MIN_POSITIVE);
        self.mass.windows(2).map(|w| (w[1] - w[0]).abs() / m0).fold(0.0, f64::max)
    }
}

/// L² projection of `f` onto the hat functions.
pub fn project(ops: &OperatorMatrices, f: &(dyn Fn(f64) -> f64 + Sync)) -> Result<Vec<f64>> {
    let b = ops.load_vector(f);
    let chol = ops
        .mass
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Tolerance("mass matrix is not positive definite".into()))?;
    Ok(chol.solve(&b).iter().copied().collect())
}

/// Time stepping from nodal data `u0`; a snapshot every `record_every` steps
/// (and always at the final time).
pub fn solve_evolution(
    ops: &OperatorMatrices,
    u0: &[f64],
    kappa: f64,
    t_end: f64,
    dt: f64,
    scheme: TimeScheme,
    record_every: usize,
) -> Result<Evolution> {
    let record_every = record_every.max(1);
    let mut mass = Vec::new();
    let mut energy = Vec::new();
    let mut snapshots = Vec::new();
    let steps = step_count(t_end, dt)?;
    evolve_observed(ops, u0, kappa, t_end, dt, scheme, |k, u, au| {
        mass.push(ops.integral(u.as_slice()));
        energy.push(u.dot(au));
        if k == 0 || k % record_every == 0 || k == steps {
            snapshots.push(Snapshot {
                time: k as f64 * dt,
                values: u.iter().copied().collect(),
            });
        }
    })?;
    Ok(Evolution {
        dt,
        snapshots,
        mass,
        energy,
    })
}

fn step_count(t_end: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidParameter(format!("dt must be positive, got {dt}")));
    }
    if !(t_end >= 0.0 && t_end.is_finite()) {
        return Err(Error::InvalidParameter(format!("t_end must be nonnegative, got {t_end}")));
    }
    let steps_f = t_end / dt;
    let steps = steps_f.round() as usize;
    if (steps_f - steps as f64).abs() > 1e-9 * steps_f.max(1.0) {
        return Err(Error::InvalidParameter(format!("t_end={t_end} is not a multiple of dt={dt}")));
    }
    Ok(steps)
}

/// Time stepping that hands `(step, u, A u)` to `observe` after every step,
/// starting with step 0, without storing the trajectory.
pub fn evolve_observed(
    ops: &OperatorMatrices,
    u0: &[f64],
    kappa: f64,
    t_end: f64,
    dt: f64,
    scheme: TimeScheme,
    mut observe: impl FnMut(usize, &DVector<f64>, &DVector<f64>),
) -> Result<()> {
    let steps = step_count(t_end, dt)?;
    if !(kappa > 0.0) {
        return Err(Error::InvalidParameter(format!("kappa must be positive, got {kappa}")));
    }
    if u0.len() != ops.nodes.len() {
        return Err(Error::InvalidParameter("initial data does not match the grid".into()));
    }
    let implicit = match scheme {
        TimeScheme::CrankNicolson => 0.5,
        TimeScheme::ImplicitEuler => 1.0,
    } * dt
        * kappa;
    let explicit = dt * kappa - implicit;
    let chol = (&ops.mass + &ops.stiffness * implicit)
        .cholesky()
        .ok_or_else(|| Error::Tolerance("time-step system is not positive definite".into()))?;

    let mut u = DVector::from_column_slice(u0);
    let mut au = &ops.stiffness * &u;
    observe(0, &u, &au);
    for k in 1..=steps {
        let mut rhs = ops.mass_apply(&u);
        if explicit != 0.0 {
            rhs.axpy(-explicit, &au, 1.0);
        }
        u = chol.solve(&rhs);
        au = &ops.stiffness * &u;
        observe(k, &u, &au);
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct RegularityReport {
    pub s: f64,
    pub n: usize,
    pub kappa_s: f64,
    pub lambda0: f64,
    pub lambda1: f64,
    /// Nonlocal gradient of the explicit profile at both walls.
    pub wall_gradient: [f64; 2],
    pub fit_window: [f64; 2],
    /// Fitted exponents of the discrete solution at the left and right walls.
    pub exponent_left: LineFit,
    pub exponent_right: LineFit,
    /// Same fits on the explicit profile.
    pub profile_exponent_left: LineFit,
    pub profile_exponent_right: LineFit,
    /// `sup d^{-s} |u|` and `sup d^{1-s} |u'|`, `d` the distance to the walls.
    pub weighted_value_sup: f64,
    pub weighted_slope_sup: f64,
    pub forcing_max: f64,
    /// L² distance between the discrete solution and the explicit profile.
    pub l2_error: f64,
    #[serde(skip)]
    pub samples: Vec<[f64; 3]>,
}

/// Explicit profile `κₛ x^s(1-x)^s + λ₀ψ₀ + λ₁ψ₁` with zero wall gradient and
/// its bounded forcing `g = u + (-Δ)ₙˢ u`.
pub struct ExplicitProfile {
    pub field: ExtendedField,
    pub kappa_s: f64,
    pub lambda0: f64,
    pub lambda1: f64,
    pub wall_gradient: [f64; 2],
    bumps: [ExtendedField; 2],
    ops: LimitOps,
}

impl ExplicitProfile {
    pub fn build(s: f64) -> Result<Self> {
        let kappa_s = build_constants(&ModelParams::new(s, 1.0)?)?.kappa_s;
        let ops = LimitOps::new(s);
        let torsion = ExtendedField::profile(Torsion { scale: kappa_s, s });
        let b0 = ExtendedField::profile(Bump {
            center: 0.4,
            radius: 0.1,
            height: 1.0,
        });
        let b1 = ExtendedField::profile(Bump {
            center: 0.6,
            radius: 0.1,
            height: 1.0,
        });
        let m = [
            grad_n(&ops, &b0, 0.0)?,
            grad_n(&ops, &b0, 1.0)?,
            grad_n(&ops, &b1, 0.0)?,
            grad_n(&ops, &b1, 1.0)?,
        ];
        let r = [grad_n(&ops, &torsion, 0.0)?, grad_n(&ops, &torsion, 1.0)?];
        let (lambda0, lambda1) = crate::testfn::solve_wall_system(m, r)?;
        let field = ExtendedField::sum(vec![(1.0, torsion), (lambda0, b0.clone()), (lambda1, b1.clone())]);
        let flat = field.flatten();
        let wall_gradient = [grad_n(&ops, &flat, 0.0)?, grad_n(&ops, &flat, 1.0)?];
        Ok(ExplicitProfile {
            field,
            kappa_s,
            lambda0,
            lambda1,
            wall_gradient,
            bumps: [b0, b1],
            ops,
        })
    }

    /// `g(x)`; the torsion part contributes exactly 1.
    pub fn forcing(&self, x: f64) -> Result<f64> {
        let x = x.clamp(1e-300, 1.0 - 1e-16);
        let l0 = if self.lambda0 != 0.0 { frac_lap_n(&self.ops, &self.bumps[0], x)? } else { 0.0 };
        let l1 = if self.lambda1 != 0.0 { frac_lap_n(&self.ops, &self.bumps[1], x)? } else { 0.0 };
        Ok(self.field.value(x) + 1.0 + self.lambda0 * l0 + self.lambda1 * l1)
    }
}

fn boundary_fit(xs: &[f64], vals: impl Fn(usize) -> f64, lo: f64, hi: f64) -> Result<LineFit> {
    let (mut x, mut y) = (Vec::new(), Vec::new());
    for (i, &d) in xs.iter().enumerate() {
        if d >= lo * (1.0 - 1e-12) && d <= hi * (1.0 + 1e-12) {
            x.push(d);
            y.push(vals(i));
        }
    }
    fit_power_law(&x, &y)
}

/// Solves `u + (-Δ)ₙˢ u = g` on `n` cells for the explicit profile's forcing
/// and fits the boundary behavior of the discrete solution.
pub fn regularity_probe(s: f64, n: usize) -> Result<RegularityReport> {
    let profile = ExplicitProfile::build(s)?;
    let ops = assemble(n, s)?;
    let g = |x: f64| profile.forcing(x).unwrap_or(f64::NAN);
    let sol = solve_stationary(&ops, 1.0, 1.0, Forcing::Function(&g))?;
    if sol.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("discrete solution"));
    }
    let u = &sol.values;
    let lo = 2.0 / n as f64;
    let hi = 0.05;
    if !(lo < hi) {
        return Err(Error::InvalidParameter(format!("grid with {n} cells leaves no fit window")));
    }
    let nodes = &ops.nodes;
    let left_d: Vec<f64> = nodes.clone();
    let right_d: Vec<f64> = nodes.iter().map(|x| 1.0 - x).collect();
    let exponent_left = boundary_fit(&left_d, |i| (u[i] - u[0]).abs(), lo, hi)?;
    let exponent_right = boundary_fit(&right_d, |i| (u[i] - u[n]).abs(), lo, hi)?;
    let f = &profile.field;
    let profile_exponent_left = boundary_fit(&left_d, |i| f.value(nodes[i]).abs(), lo, hi)?;
    let profile_exponent_right = boundary_fit(&right_d, |i| f.value(nodes[i]).abs(), lo, hi)?;

    let mut weighted_value_sup: f64 = 0.0;
    let mut weighted_slope_sup: f64 = 0.0;
    let fine = 20_000;
    for k in 1..fine {
        let x = k as f64 / fine as f64;
        let d = x.min(1.0 - x);
        weighted_value_sup = weighted_value_sup.max(d.powf(-s) * f.value(x).abs());
        weighted_slope_sup = weighted_slope_sup.max(d.powf(1.0 - s) * f.derivative(x).abs());
    }
    let samples: Vec<[f64; 3]> = nodes
        .par_iter()
        .zip(u.par_iter())
        .map(|(&x, &v)| [x, v, g(x)])
        .collect();
    let forcing_max = samples.iter().map(|r| r[2].abs()).fold(0.0, f64::max);
    if !forcing_max.is_finite() {
        return Err(Error::NonFinite("forcing"));
    }
    let nodal = NodalField::new(nodes.clone(), u.clone())?;
    let l2_error = quad::adaptive(
        |x: f64| (nodal.value(x) - f.value(x)).powi(2),
        &[0.0, 0.01, 0.1, 0.5, 0.9, 0.99, 1.0],
        quad::Tol::new(1e-8, 1e-16),
    )
    .value
    .sqrt();

    Ok(RegularityReport {
        s,
        n,
        kappa_s: profile.kappa_s,
        lambda0: profile.lambda0,
        lambda1: profile.lambda1,
        wall_gradient: profile.wall_gradient,
        fit_window: [lo, hi],
        exponent_left,
        exponent_right,
        profile_exponent_left,
        profile_exponent_right,
        weighted_value_sup,
        weighted_slope_sup,
        forcing_max,
        l2_error,
        samples,
    })
}

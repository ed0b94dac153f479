//! Convergence experiments: ε-sweeps of the operators, kinetic against
//! diffusion comparisons, and the resolvent duality probe.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::{Cosine, ExtendedField};
use crate::fit::{fit_power_law, LineFit};
use crate::frac_solver::{assemble, evolve_observed, project, solve_stationary, Forcing, OperatorMatrices, TimeScheme};
use crate::kinetic_mc::{run_histograms, run_weak_moments, Dynamics, EventCounts, InitialData, Samplers};
use crate::model::Model;
use crate::nonlocal_ops::{frac_lap_n, grad_eps, grad_n, l_eps};
use crate::quad::{self, Tol};
use crate::testfn::{correct, neumann_project, phi_eps, Cutoff};

/// Where a report came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Provenance {
    pub seed: u64,
    pub config_hash: String,
}

/// Minimum coefficient of determination for a rate to be reported.
pub const MIN_R2: f64 = 0.9;

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceReport {
    pub experiment: String,
    pub metric: String,
    /// Name of the swept parameter (`eps`, `n`, ...).
    pub parameter: String,
    pub levels: Vec<f64>,
    pub errors: Vec<f64>,
    /// Statistical error bars, when the errors are Monte Carlo estimates.
    pub stderr: Option<Vec<f64>>,
    /// Errors decrease strictly along the sweep.
    pub monotone: bool,
    /// Log-log fit of error against level; withheld when `r2 < MIN_R2`.
    pub fit: Option<LineFit>,
    pub fit_r2: Option<f64>,
    /// Required slope of the fit, if any.
    pub required_rate: Option<f64>,
    pub passed: Option<bool>,
    pub provenance: Provenance,
}

impl ConvergenceReport {
    /// Levels must be strictly ordered (either direction); errors nonnegative.
    /// Errors are expected to decrease along the given order.
    pub fn new(experiment: &str, metric: &str, parameter: &str, levels: Vec<f64>, errors: Vec<f64>, provenance: Provenance) -> Result<Self> {
        if levels.len() != errors.len() || levels.is_empty() {
            return Err(Error::InvalidParameter("report needs one error per level".into()));
        }
        let up = levels.windows(2).all(|w| w[1] > w[0]);
        let down = levels.windows(2).all(|w| w[1] < w[0]);
        if !(up || down) {
            return Err(Error::InvalidParameter("report levels must be strictly ordered".into()));
        }
        if errors.iter().any(|e| !(e.is_finite() && *e >= 0.0)) {
            return Err(Error::NonFinite("report errors"));
        }
        let monotone = errors.windows(2).all(|w| w[1] < w[0]);
        let (fit, fit_r2) = if levels.len() >= 3 && errors.iter().all(|&e| e > 0.0) {
            match fit_power_law(&levels, &errors) {
                Ok(f) if f.r2 >= MIN_R2 => (Some(f), Some(f.r2)),
                Ok(f) => (None, Some(f.r2)),
                Err(_) => (None, None),
            }
        } else {
            (None, None)
        };
        Ok(ConvergenceReport {
            experiment: experiment.into(),
            metric: metric.into(),
            parameter: parameter.into(),
            levels,
            errors,
            stderr: None,
            monotone,
            fit,
            fit_r2,
            required_rate: None,
            passed: None,
            provenance,
        })
    }

    pub fn with_stderr(mut self, stderr: Vec<f64>) -> Self {
        self.stderr = Some(stderr);
        self
    }

    /// Requires the fitted slope to reach `rate`; fails when no rate is reported.
    pub fn require_rate(mut self, rate: f64) -> Self {
        self.required_rate = Some(rate);
        self.passed = Some(self.fit.is_some_and(|f| f.slope >= rate));
        self
    }

    pub fn rate(&self) -> Option<f64> {
        self.fit.map(|f| f.slope)
    }
}

/// Quadrature resolution of the operator sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OpSweepSettings {
    /// Panels per half of `[0,1]` for the L¹ error, graded toward the walls.
    pub l1_panels: usize,
    /// Points of the sup-norm grid, walls included.
    pub sup_points: usize,
    /// Uniform Gauss panels in `x` for the `φ^ε` error.
    pub phi_panels: usize,
}

impl Default for OpSweepSettings {
    fn default() -> Self {
        OpSweepSettings {
            l1_panels: 16,
            sup_points: 65,
            phi_panels: 12,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct OpLevel {
    pub eps: f64,
    /// `‖𝓛^ε[ψ^ε] + κ(-Δ)ₙˢψ‖_{L¹}`.
    pub generator_l1: f64,
    /// `sup |D_ε[ψ] - (2sγ₀/c₁ₛ) Dₙ[ψ]|`.
    pub gradient_sup: f64,
    /// `|λ₀^ε| + |λ₁^ε|`.
    pub lambda_sum: f64,
    /// `∬ |φ^ε - ψ^ε|² F`.
    pub transport_l2: f64,
    pub correction_residuals: [f64; 2],
}

#[derive(Debug, Clone, Serialize)]
pub struct OpConvergence {
    pub levels: Vec<OpLevel>,
    pub reports: Vec<ConvergenceReport>,
}

fn graded_panels(per_half: usize) -> Vec<f64> {
    let mut pts: Vec<f64> = (0..=per_half)
        .map(|k| 0.5 * (k as f64 / per_half as f64).powi(2))
        .collect();
    let mirror: Vec<f64> = pts.iter().rev().skip(1).map(|x| 1.0 - x).collect();
    pts.extend(mirror);
    pts
}

fn gauss_on(panels: &[f64], order: usize) -> Vec<(f64, f64)> {
    let rule = quad::legendre01(order);
    panels
        .windows(2)
        .flat_map(|w| {
            let (a, h) = (w[0], w[1] - w[0]);
            rule.iter().map(move |&(t, wt)| (a + h * t, wt * h)).collect::<Vec<_>>()
        })
        .collect()
}

/// Checks that `ψ` has vanishing nonlocal Neumann gradient at both walls.
pub fn check_admissible(model: &Model, psi: &ExtendedField) -> Result<()> {
    let ops = model.limit_ops();
    let d = [grad_n(&ops, psi, 0.0)?, grad_n(&ops, psi, 1.0)?];
    let scale = psi.sampled_scale(256).max(1.0);
    if d[0].abs().max(d[1].abs()) > 1e-8 * scale {
        return Err(Error::InvalidParameter(format!(
            "test function is not Neumann-admissible: wall gradients {:.3e}, {:.3e}",
            d[0], d[1]
        )));
    }
    Ok(())
}

/// `cos(πx)` projected onto vanishing nonlocal Neumann gradient with the
/// default cutoff pair.
pub fn standard_test_function(model: &Model) -> Result<ExtendedField> {
    let base = ExtendedField::profile(Cosine {
        mode: 1.0,
        amplitude: 1.0,
    });
    Ok(neumann_project(&model.limit_ops(), &base, &Cutoff::default())?.field)
}

/// `∫ F(v) h(v) dv` over the line, mapped to two unit intervals.
fn velocity_average(model: &Model, h: impl Fn(f64) -> Result<f64> + Copy, tol: Tol) -> Result<f64> {
    let eq = model.params.equilibrium();
    let mut total = 0.0;
    for sign in [1.0, -1.0] {
        let mut failure = None;
        let est = quad::adaptive(
            |t: f64| {
                if t >= 1.0 {
                    return 0.0;
                }
                let v = sign * t / (1.0 - t);
                match h(v) {
                    Ok(y) => eq.density(v) * y / ((1.0 - t) * (1.0 - t)),
                    Err(e) => {
                        failure.get_or_insert(e);
                        0.0
                    }
                }
            },
            &[0.0, 0.5, 0.9, 0.99, 1.0],
            tol,
        );
        if let Some(e) = failure {
            return Err(e);
        }
        total += est.ok("velocity average")?;
    }
    Ok(total)
}

/// Operator convergence over an ε-sweep for a Neumann-admissible `ψ`.
pub fn op_convergence(
    model: &Model,
    psi: &ExtendedField,
    chi: &Cutoff,
    eps_list: &[f64],
    settings: OpSweepSettings,
    provenance: &Provenance,
) -> Result<OpConvergence> {
    check_admissible(model, psi)?;
    let ops = model.limit_ops();
    let kappa = model.constants.kappa;
    let flux = model.constants.flux_factor();
    let l1_nodes = gauss_on(&graded_panels(settings.l1_panels), 8);
    let limit_values: Vec<f64> = l1_nodes
        .par_iter()
        .map(|&(x, _)| frac_lap_n(&ops, psi, x))
        .collect::<Result<_>>()?;
    let sup_grid: Vec<f64> = (0..settings.sup_points)
        .map(|k| k as f64 / (settings.sup_points - 1) as f64)
        .collect();
    let limit_grad: Vec<f64> = sup_grid
        .par_iter()
        .map(|&x| grad_n(&ops, psi, x).map(|g| flux * g))
        .collect::<Result<_>>()?;
    let phi_nodes = gauss_on(
        &(0..=settings.phi_panels).map(|k| k as f64 / settings.phi_panels as f64).collect::<Vec<_>>(),
        6,
    );

    let mut levels = Vec::with_capacity(eps_list.len());
    for &eps in eps_list {
        let corrected = correct(model, psi, eps, chi)?;
        let field = &corrected.composite;
        let generator_l1 = l1_nodes
            .par_iter()
            .zip(&limit_values)
            .map(|(&(x, w), &lim)| l_eps(model, field, x, eps).map(|g| w * (g + kappa * lim).abs()))
            .collect::<Result<Vec<f64>>>()?
            .iter()
            .sum();
        let gradient_sup = sup_grid
            .par_iter()
            .zip(&limit_grad)
            .map(|(&x, &lim)| grad_eps(model, psi, x, eps).map(|g| (g - lim).abs()))
            .collect::<Result<Vec<f64>>>()?
            .into_iter()
            .fold(0.0, f64::max);
        let transport_l2 = phi_nodes
            .par_iter()
            .map(|&(x, w)| {
                let base = field.value(x);
                velocity_average(
                    model,
                    |v| phi_eps(model, field, x, v, eps).map(|p| (p - base) * (p - base)),
                    Tol::new(1e-7, 1e-16),
                )
                .map(|a| w * a)
            })
            .collect::<Result<Vec<f64>>>()?
            .iter()
            .sum();
        levels.push(OpLevel {
            eps,
            generator_l1,
            gradient_sup,
            lambda_sum: corrected.lambda0.abs() + corrected.lambda1.abs(),
            transport_l2,
            correction_residuals: corrected.residuals,
        });
    }

    let eps: Vec<f64> = eps_list.to_vec();
    let series = |name: &str, f: fn(&OpLevel) -> f64| {
        ConvergenceReport::new(
            "operators",
            name,
            "eps",
            eps.clone(),
            levels.iter().map(f).collect(),
            provenance.clone(),
        )
    };
    let s = model.s();
    let reports = vec![
        series("generator_l1", |l| l.generator_l1)?,
        series("gradient_sup", |l| l.gradient_sup)?.require_rate((2.0 * s).min(1.95 - 2.0 * s) - 0.15),
        series("lambda_sum", |l| l.lambda_sum)?,
        series("transport_l2", |l| l.transport_l2)?,
    ];
    Ok(OpConvergence { levels, reports })
}

/// Galerkin reference for the kinetic comparison.
#[derive(Debug, Clone, Serialize)]
pub struct DiffusionReference {
    pub cells: usize,
    pub dt: f64,
    pub times: Vec<f64>,
    /// Nodal values at each requested time.
    #[serde(skip)]
    pub values: Vec<Vec<f64>>,
}

/// CN evolution of the projected initial density, sampled at `times`.
pub fn diffusion_reference(
    model: &Model,
    ops: &OperatorMatrices,
    data: &InitialData,
    times: &[f64],
    dt: f64,
) -> Result<DiffusionReference> {
    let u0 = project(ops, &data.density_fn())?;
    let t_end = times.iter().copied().fold(0.0, f64::max);
    let steps: Vec<usize> = times
        .iter()
        .map(|&t| {
            let k = (t / dt).round();
            if (k * dt - t).abs() > 1e-9 * t.max(dt) {
                Err(Error::TimeSupport(format!("snapshot time {t} is not a multiple of dt={dt}")))
            } else {
                Ok(k as usize)
            }
        })
        .collect::<Result<_>>()?;
    let mut values = vec![Vec::new(); times.len()];
    evolve_observed(ops, &u0, model.constants.kappa, t_end, dt, TimeScheme::CrankNicolson, |k, u, _| {
        for (slot, &target) in values.iter_mut().zip(&steps) {
            if target == k {
                *slot = u.iter().copied().collect();
            }
        }
    })?;
    Ok(DiffusionReference {
        cells: ops.cells(),
        dt,
        times: times.to_vec(),
        values,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonSpec {
    pub eps: Vec<f64>,
    pub times: Vec<f64>,
    pub particles: usize,
    pub cells: usize,
    pub reference_cells: usize,
    pub dt: f64,
    /// Battery `cos(kπx)` for these `k`.
    pub modes: Vec<usize>,
    /// Smallest weak-metric gap the run must resolve at 3σ.
    pub signal_floor: f64,
    pub seed: u64,
}

impl Default for ComparisonSpec {
    fn default() -> Self {
        ComparisonSpec {
            eps: vec![0.5, 0.25, 0.125],
            times: vec![0.1, 0.3],
            particles: 1_000_000,
            cells: 32,
            reference_cells: 512,
            dt: 1e-3,
            modes: vec![1, 2, 3],
            signal_floor: 0.01,
            seed: 0,
        }
    }
}

impl ComparisonSpec {
    /// Particles needed so that 3σ of the summed weak metric stays below the
    /// signal floor, using `sup|ψⱼ| · mass / √N` as the per-test bound.
    pub fn required_particles(&self, mass: f64) -> usize {
        let per = mass * (self.modes.len() as f64).sqrt();
        (3.0 * per / self.signal_floor).powi(2).ceil() as usize
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ComparisonLevel {
    pub eps: f64,
    pub time: f64,
    /// `Σ |ρ̂ - ρ̄| Δx` over histogram cells, `ρ̄` the reference cell average.
    pub l1: f64,
    /// Expected size of `l1` from noise alone, `√(2/π) Σ σₖ Δx`.
    pub l1_noise: f64,
    pub weak: Vec<f64>,
    pub weak_stderr: Vec<f64>,
    /// `Σⱼ |∫(ρ̂ - ρ)ψⱼ|`.
    pub weak_total: f64,
    pub weak_total_stderr: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct KineticComparison {
    pub spec: ComparisonSpec,
    pub levels: Vec<ComparisonLevel>,
    /// `max |∫(ρₙ - ρ_{n/2})ψⱼ|` of the reference.
    pub reference_self_error: f64,
    /// Self-error at most a fifth of the smallest observed weak distance.
    pub reference_adequate: bool,
    /// Per snapshot time: every consecutive decrease exceeds 3 combined σ.
    pub decreasing_beyond_noise: Vec<bool>,
    pub reports: Vec<ConvergenceReport>,
    pub events: Vec<EventCounts>,
}

fn reference_moments(ops: &OperatorMatrices, reference: &DiffusionReference, modes: &[usize]) -> Vec<Vec<f64>> {
    let loads: Vec<DVector<f64>> = modes
        .iter()
        .map(|&k| {
            let w = k as f64 * std::f64::consts::PI;
            ops.load_vector(&move |x: f64| (w * x).cos())
        })
        .collect();
    reference
        .values
        .iter()
        .map(|u| {
            let u = DVector::from_column_slice(u);
            loads.iter().map(|b| u.dot(b)).collect()
        })
        .collect()
}

fn cell_averages(ops: &OperatorMatrices, u: &[f64], cells: usize) -> Vec<f64> {
    let rule = quad::legendre01(4);
    let h = 1.0 / cells as f64;
    let n = ops.cells();
    (0..cells)
        .map(|c| {
            // reference nodes are nested in the histogram cells when n is a multiple
            let sub = (n / cells).max(1) * 4;
            let hs = h / sub as f64;
            let mut acc = 0.0;
            for j in 0..sub {
                let a = c as f64 * h + j as f64 * hs;
                for &(t, w) in rule.iter() {
                    let x = a + hs * t;
                    let k = ((x * n as f64) as usize).min(n - 1);
                    let r = x * n as f64 - k as f64;
                    acc += w * hs * (u[k] * (1.0 - r) + u[k + 1] * r);
                }
            }
            acc / h
        })
        .collect()
}

/// Compares particle histograms and weak moments against the Galerkin limit.
pub fn kinetic_vs_diffusion(
    model: &Model,
    data: &InitialData,
    spec: &ComparisonSpec,
    provenance: &Provenance,
) -> Result<KineticComparison> {
    let required = spec.required_particles(data.mass);
    if spec.particles < required {
        return Err(Error::BudgetInsufficient {
            requested: spec.particles,
            required,
        });
    }
    if spec.reference_cells % 2 != 0 || spec.reference_cells % spec.cells != 0 {
        return Err(Error::InvalidParameter(
            "reference grid must be even and a multiple of the histogram grid".into(),
        ));
    }
    let samplers = Samplers::new(model)?;
    let fine = assemble(spec.reference_cells, model.s())?;
    let coarse = assemble(spec.reference_cells / 2, model.s())?;
    let reference = diffusion_reference(model, &fine, data, &spec.times, spec.dt)?;
    let coarse_ref = diffusion_reference(model, &coarse, data, &spec.times, spec.dt)?;
    let ref_moments = reference_moments(&fine, &reference, &spec.modes);
    let coarse_moments = reference_moments(&coarse, &coarse_ref, &spec.modes);
    let reference_self_error = ref_moments
        .iter()
        .flatten()
        .zip(coarse_moments.iter().flatten())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let ref_cells: Vec<Vec<f64>> = reference.values.iter().map(|u| cell_averages(&fine, u, spec.cells)).collect();

    let battery: Vec<ExtendedField> = spec
        .modes
        .iter()
        .map(|&k| {
            ExtendedField::profile(Cosine {
                mode: k as f64,
                amplitude: 1.0,
            })
        })
        .collect();
    let mut levels = Vec::new();
    let mut events = Vec::new();
    for (e_idx, &eps) in spec.eps.iter().enumerate() {
        let dynamics = Dynamics::new(model, &samplers, eps)?;
        let seed = spec.seed.wrapping_add(e_idx as u64);
        let run = run_histograms(&dynamics, data, spec.particles, seed, &spec.times, spec.cells)?;
        let moments = run_weak_moments(&dynamics, data, spec.particles, seed, &spec.times, &battery)?;
        events.push(run.events);
        for (k, &time) in spec.times.iter().enumerate() {
            let snap = &run.snapshots[k];
            let dx = snap.cell_width();
            let l1 = snap.averages().iter().zip(&ref_cells[k]).map(|(a, r)| (a - r).abs() * dx).sum();
            let l1_noise = (2.0 / std::f64::consts::PI).sqrt() * snap.stderr().iter().map(|s| s * dx).sum::<f64>();
            let weak: Vec<f64> = moments.means[k].iter().zip(&ref_moments[k]).map(|(m, r)| (m - r).abs()).collect();
            let weak_stderr = moments.stderr[k].clone();
            levels.push(ComparisonLevel {
                eps,
                time,
                l1,
                l1_noise,
                weak_total: weak.iter().sum(),
                weak_total_stderr: weak_stderr.iter().map(|s| s * s).sum::<f64>().sqrt(),
                weak,
                weak_stderr,
            });
        }
    }

    let smallest = levels.iter().map(|l| l.weak_total).fold(f64::INFINITY, f64::min);
    let mut decreasing_beyond_noise = Vec::new();
    let mut reports = Vec::new();
    for &time in &spec.times {
        let row: Vec<&ComparisonLevel> = levels.iter().filter(|l| l.time == time).collect();
        decreasing_beyond_noise.push(row.windows(2).all(|w| {
            let gap = w[0].weak_total - w[1].weak_total;
            gap > 3.0 * w[0].weak_total_stderr.hypot(w[1].weak_total_stderr)
        }));
        let eps: Vec<f64> = row.iter().map(|l| l.eps).collect();
        reports.push(
            ConvergenceReport::new(
                "kinetic",
                &format!("weak_t{time}"),
                "eps",
                eps.clone(),
                row.iter().map(|l| l.weak_total).collect(),
                provenance.clone(),
            )?
            .with_stderr(row.iter().map(|l| l.weak_total_stderr).collect()),
        );
        reports.push(ConvergenceReport::new(
            "kinetic",
            &format!("l1_t{time}"),
            "eps",
            eps,
            row.iter().map(|l| l.l1).collect(),
            provenance.clone(),
        )?);
    }
    Ok(KineticComparison {
        spec: spec.clone(),
        levels,
        reference_self_error,
        reference_adequate: reference_self_error <= smallest / 5.0,
        decreasing_beyond_noise,
        reports,
        events,
    })
}

/// One resolvent identity check.
#[derive(Debug, Clone, Serialize)]
pub struct DualityEntry {
    pub lambda: f64,
    pub forcing: String,
    /// `∫ρ_in φ`.
    pub initial_pairing: f64,
    /// `∫₀^∞ e^{-λt} ∫ρ(t) g dt`.
    pub time_pairing: f64,
    pub residual: f64,
    /// `residual / (‖ρ_in‖ ‖g‖)` with L² norms.
    pub normalized: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct DualityReport {
    pub cells: usize,
    pub dt: f64,
    pub horizon: f64,
    /// Normalized residual of the constant case `ρ_in = g = 1`.
    pub calibration: f64,
    pub entries: Vec<DualityEntry>,
    pub provenance: Provenance,
}

/// Named smooth forcing for the duality probe.
pub struct NamedForcing<'a> {
    pub name: &'a str,
    pub f: &'a (dyn Fn(f64) -> f64 + Sync),
}

/// Time pairings `∫₀^T e^{-λt} h(t) dt` by Simpson with one Richardson step,
/// plus the tail `e^{-λT} h(T)/λ`.
fn laplace_pairing(samples: &[f64], dt: f64, lambda: f64) -> Result<f64> {
    let m = samples.len() - 1;
    if m % 4 != 0 || m == 0 {
        return Err(Error::TimeSupport(format!("step count {m} is not a multiple of 4")));
    }
    let simpson = |stride: usize| {
        let h = dt * stride as f64;
        let count = m / stride;
        let mut acc = 0.0;
        for j in 0..=count {
            let t = j as f64 * h;
            let w = if j == 0 || j == count {
                1.0
            } else if j % 2 == 1 {
                4.0
            } else {
                2.0
            };
            acc += w * (-lambda * t).exp() * samples[j * stride];
        }
        acc * h / 3.0
    };
    let fine = simpson(1);
    let coarse = simpson(2);
    let horizon = m as f64 * dt;
    Ok(fine + (fine - coarse) / 15.0 + (-lambda * horizon).exp() * samples[m] / lambda)
}

/// Evaluates the resolvent duality identity on the Galerkin semigroup.
pub fn duality_residual(
    model: &Model,
    cells: usize,
    dt: f64,
    horizon: f64,
    rho_in: &(dyn Fn(f64) -> f64 + Sync),
    lambdas: &[f64],
    forcings: &[NamedForcing],
    provenance: &Provenance,
) -> Result<DualityReport> {
    let ops = assemble(cells, model.s())?;
    let kappa = model.constants.kappa;
    let steps = (horizon / dt).round() as usize;
    if steps == 0 || steps % 4 != 0 || (steps as f64 * dt - horizon).abs() > 1e-9 * horizon {
        return Err(Error::TimeSupport(format!(
            "horizon {horizon} must be a positive multiple of 4·dt = {}",
            4.0 * dt
        )));
    }
    let l2 = |f: &(dyn Fn(f64) -> f64 + Sync)| quad::integrate(|x| f(x) * f(x), 0.0, 1.0, Tol::new(1e-12, 1e-15)).value.sqrt();

    let pairings = |initial: &(dyn Fn(f64) -> f64 + Sync), gs: &[&(dyn Fn(f64) -> f64 + Sync)]| -> Result<(Vec<f64>, Vec<Vec<f64>>, f64)> {
        let u0 = project(&ops, initial)?;
        let loads: Vec<DVector<f64>> = gs.iter().map(|g| ops.load_vector(*g)).collect();
        let mut series = vec![Vec::with_capacity(steps + 1); gs.len()];
        evolve_observed(&ops, &u0, kappa, horizon, dt, TimeScheme::CrankNicolson, |_, u, _| {
            for (s, b) in series.iter_mut().zip(&loads) {
                s.push(u.dot(b));
            }
        })?;
        // the transient must have died out for the tail formula to apply
        let mass = ops.integral(&u0);
        let drift = series
            .iter()
            .zip(&loads)
            .map(|(s, b)| (s[steps] - mass * b.sum()).abs() / (mass.abs() * b.abs().sum()).max(f64::MIN_POSITIVE))
            .fold(0.0, f64::max);
        Ok((u0, series, drift))
    };

    // constant case: ρ_in = g = 1, every pairing equals 1/λ
    let one = |_: f64| 1.0;
    let (u1, s1, _) = pairings(&one, &[&one])?;
    let mut calibration: f64 = 0.0;
    for &lambda in lambdas {
        let phi = solve_stationary(&ops, lambda, kappa, Forcing::Function(&one))?;
        let lhs = DVector::from_column_slice(&u1).dot(&ops.mass_apply(&DVector::from_column_slice(&phi.values)));
        let rhs = laplace_pairing(&s1[0], dt, lambda)?;
        calibration = calibration.max((lhs - rhs).abs().max((lhs - 1.0 / lambda).abs()));
    }
    // the floor here is the conditioning of the resolvent solve, not the time quadrature
    if !(calibration <= 1e-9) {
        return Err(Error::Tolerance(format!("time quadrature calibration residual {calibration:.2e} exceeds 1e-9")));
    }

    let gs: Vec<&(dyn Fn(f64) -> f64 + Sync)> = forcings.iter().map(|f| f.f).collect();
    let (u0, series, drift) = pairings(rho_in, &gs)?;
    // error the remaining transient can put into the tail term
    let tail_error = lambdas
        .iter()
        .map(|&l| (-l * horizon).exp() * drift / l)
        .fold(0.0, f64::max);
    if !(tail_error <= 1e-9) {
        return Err(Error::TimeSupport(format!(
            "horizon {horizon} too short: solution still {drift:.2e} away from equilibrium"
        )));
    }
    let u0 = DVector::from_column_slice(&u0);
    let rho_norm = l2(rho_in);
    let mut entries = Vec::new();
    for &lambda in lambdas {
        for (g, s) in forcings.iter().zip(&series) {
            let phi = solve_stationary(&ops, lambda, kappa, Forcing::Function(g.f))?;
            let initial_pairing = u0.dot(&ops.mass_apply(&DVector::from_column_slice(&phi.values)));
            let time_pairing = laplace_pairing(s, dt, lambda)?;
            let residual = (initial_pairing - time_pairing).abs();
            entries.push(DualityEntry {
                lambda,
                forcing: g.name.to_string(),
                initial_pairing,
                time_pairing,
                residual,
                normalized: residual / (rho_norm * l2(g.f)),
            });
        }
    }
    Ok(DualityReport {
        cells,
        dt,
        horizon,
        calibration,
        entries,
        provenance: provenance.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibria::{KernelSettings, ModelParams};
    use crate::field::Bump;
    use crate::nonlocal_ops::QuadratureSpec;
    use std::sync::OnceLock;

    fn model() -> &'static Model {
        static M: OnceLock<Model> = OnceLock::new();
        M.get_or_init(|| {
            Model::with_settings(
                ModelParams::new(0.75, 1.0).unwrap(),
                KernelSettings {
                    points_per_decade: 512,
                    ..Default::default()
                },
                QuadratureSpec::default(),
            )
            .unwrap()
        })
    }

    fn prov() -> Provenance {
        Provenance {
            seed: 0,
            config_hash: "test".into(),
        }
    }

    #[test]
    fn report_fits_and_gates() {
        let eps = vec![0.25, 0.125, 0.0625, 0.03125];
        let errs: Vec<f64> = eps.iter().map(|e| 2.0 * e * e).collect();
        let r = ConvergenceReport::new("x", "m", "eps", eps.clone(), errs, prov()).unwrap().require_rate(1.9);
        assert!(r.monotone && r.passed == Some(true));
        assert!((r.rate().unwrap() - 2.0).abs() < 1e-12);
        let noisy = vec![1.0, 0.2, 0.9, 0.1];
        let r = ConvergenceReport::new("x", "m", "eps", eps.clone(), noisy, prov()).unwrap().require_rate(0.5);
        assert!(r.fit.is_none() && r.fit_r2.unwrap() < MIN_R2 && r.passed == Some(false));
        assert!(ConvergenceReport::new("x", "m", "eps", vec![0.1, 0.1, 0.05], vec![1.0; 3], prov()).is_err());
        let two = ConvergenceReport::new("x", "m", "eps", vec![0.5, 0.25], vec![1.0, 0.5], prov()).unwrap();
        assert!(two.fit.is_none());
    }

    #[test]
    fn constant_test_function_has_no_error() {
        let m = model();
        let out = op_convergence(
            m,
            &ExtendedField::constant(2.0),
            &Cutoff::default(),
            &[0.25, 0.125, 0.0625],
            OpSweepSettings {
                l1_panels: 4,
                sup_points: 9,
                phi_panels: 2,
            },
            &prov(),
        )
        .unwrap();
        for l in &out.levels {
            assert!(l.generator_l1 <= 1e-10, "{l:?}");
            assert!(l.gradient_sup <= 1e-10, "{l:?}");
            assert!(l.lambda_sum <= 1e-10, "{l:?}");
            assert!(l.transport_l2 <= 1e-10, "{l:?}");
        }
    }

    #[test]
    fn non_admissible_test_function_is_rejected() {
        let m = model();
        let psi = ExtendedField::profile(Cosine {
            mode: 1.0,
            amplitude: 1.0,
        });
        let r = op_convergence(m, &psi, &Cutoff::default(), &[0.25], OpSweepSettings::default(), &prov());
        assert!(matches!(r, Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn admissible_projection_passes_the_check() {
        let m = model();
        let base = ExtendedField::profile(Bump {
            center: 0.5,
            radius: 0.3,
            height: 1.0,
        });
        let p = neumann_project(&m.limit_ops(), &ExtendedField::sum(vec![(1.0, base), (0.5, ExtendedField::profile(Cosine { mode: 1.0, amplitude: 1.0 }))]), &Cutoff::default()).unwrap();
        check_admissible(m, &p.field).unwrap();
    }

    #[test]
    fn laplace_pairing_is_exact_for_exponentials() {
        let dt = 1e-2;
        let samples: Vec<f64> = (0..=2000).map(|k| 3.0 + (-(k as f64) * dt).exp()).collect();
        let exact_head = 3.0 * (1.0 - (-20.0f64).exp()) + (1.0 - (-40.0f64).exp()) / 2.0;
        let tail = (-20.0f64).exp() * samples[2000];
        let got = laplace_pairing(&samples, dt, 1.0).unwrap();
        assert!((got - exact_head - tail).abs() < 1e-11, "{}", got - exact_head - tail);
        assert!(laplace_pairing(&samples[..7], dt, 1.0).is_err());
    }

    #[test]
    fn duality_holds_on_a_coarse_grid() {
        let m = model();
        let rho = |x: f64| 1.0 + 0.5 * (std::f64::consts::PI * x).cos();
        let g1 = |x: f64| (2.0 * std::f64::consts::PI * x).cos();
        let g2 = |x: f64| x * x;
        let forcings = [NamedForcing { name: "cos2", f: &g1 }, NamedForcing { name: "square", f: &g2 }];
        let r = duality_residual(m, 64, 4e-3, 12.0, &rho, &[0.5, 1.0, 2.0], &forcings, &prov()).unwrap();
        assert!(r.calibration <= 1e-10);
        for e in &r.entries {
            assert!(e.normalized < 2e-5, "{e:?}");
        }
        let fine = duality_residual(m, 64, 2e-3, 12.0, &rho, &[0.5, 1.0, 2.0], &forcings, &prov()).unwrap();
        for (c, f) in r.entries.iter().zip(&fine.entries) {
            if c.normalized > 1e-12 {
                assert!(f.normalized < 0.5 * c.normalized, "{c:?} {f:?}");
            }
        }
        assert!(matches!(duality_residual(m, 64, 4e-3, 0.1, &rho, &[1.0], &forcings, &prov()), Err(Error::TimeSupport(_))));
    }

    #[test]
    fn budget_refusal_reports_requirement() {
        let m = model();
        let data = InitialData::cosine(0.5).unwrap();
        let spec = ComparisonSpec {
            particles: 1000,
            ..Default::default()
        };
        match kinetic_vs_diffusion(m, &data, &spec, &prov()) {
            Err(Error::BudgetInsufficient { requested, required }) => {
                assert_eq!(requested, 1000);
                assert_eq!(required, spec.required_particles(1.0));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn equilibrium_matches_within_noise() {
        let m = model();
        let data = InitialData::uniform(1.0).unwrap();
        let spec = ComparisonSpec {
            eps: vec![0.5, 0.25],
            times: vec![0.1],
            particles: 400_000,
            cells: 16,
            reference_cells: 64,
            dt: 1e-2,
            signal_floor: 0.02,
            ..Default::default()
        };
        let out = kinetic_vs_diffusion(m, &data, &spec, &prov()).unwrap();
        assert!(out.reference_self_error < 1e-10);
        for l in &out.levels {
            for (w, s) in l.weak.iter().zip(&l.weak_stderr) {
                assert!(*w <= 3.0 * s, "{l:?}");
            }
            assert!(l.l1 <= 3.0 * l.l1_noise, "{l:?}");
        }
    }
}

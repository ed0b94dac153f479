//! Event-driven particle simulation of the rescaled kinetic equation: free
//! flight at speed `ε^{1-2s} v`, velocity resampling from `F` at rate
//! `ν₀ ε^{-2s}`, diffuse re-emission at both walls.
//!
//! Particle `i` draws from its own ChaCha stream `(seed, i)`, so trajectories
//! do not depend on how particles are split across threads.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::equilibria::{BoundarySampler, VelocitySampler};
use crate::error::{Error, Result};
use crate::field::ExtendedField;
use crate::model::Model;
use crate::nonlocal_ops::l_eps;
use crate::quad::{self, Tol};
use crate::testfn::{phi_eps, CorrectedTestFunction};

/// Particles handled per task; also the unit of ordered reduction.
pub const CHUNK: usize = 4096;

/// Velocity samplers shared by every run of a model.
#[derive(Debug, Clone)]
pub struct Samplers {
    pub velocity: VelocitySampler,
    pub boundary: BoundarySampler,
}

impl Samplers {
    pub fn new(model: &Model) -> Result<Self> {
        Ok(Samplers {
            velocity: VelocitySampler::new(&model.params)?,
            boundary: BoundarySampler::new(&model.params, &model.constants)?,
        })
    }
}

/// Scaled dynamics at a given Knudsen number.
#[derive(Debug, Clone, Copy)]
pub struct Dynamics<'a> {
    pub samplers: &'a Samplers,
    pub eps: f64,
    /// `ε^{1-2s}`.
    pub speed_scale: f64,
    /// `ν₀ ε^{-2s}`.
    pub collision_rate: f64,
}

impl<'a> Dynamics<'a> {
    pub fn new(model: &Model, samplers: &'a Samplers, eps: f64) -> Result<Self> {
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::InvalidParameter(format!("eps must be positive, got {eps}")));
        }
        let s = model.params.s;
        Ok(Dynamics {
            samplers,
            eps,
            speed_scale: eps.powf(1.0 - 2.0 * s),
            collision_rate: model.params.nu0 * eps.powf(-2.0 * s),
        })
    }

    fn clock<R: Rng>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        -(-u).ln_1p() / self.collision_rate
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Particle {
    pub x: f64,
    pub v: f64,
    /// Time left until the next collision.
    pub clock: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct EventCounts {
    pub collisions: u64,
    pub left_hits: u64,
    pub right_hits: u64,
    /// Re-emissions at each wall; equal to the hits by construction.
    pub left_emissions: u64,
    pub right_emissions: u64,
}

impl EventCounts {
    fn merge(&mut self, o: &EventCounts) {
        self.collisions += o.collisions;
        self.left_hits += o.left_hits;
        self.right_hits += o.right_hits;
        self.left_emissions += o.left_emissions;
        self.right_emissions += o.right_emissions;
    }
}

/// Moves a particle through `dt` units of macroscopic time.
pub fn fly<R: Rng>(p: &mut Particle, dt: f64, dynamics: &Dynamics, rng: &mut R, counts: &mut EventCounts) {
    let mut remaining = dt;
    loop {
        let speed = dynamics.speed_scale * p.v;
        let to_wall = if speed > 0.0 {
            (1.0 - p.x) / speed
        } else if speed < 0.0 {
            p.x / -speed
        } else {
            f64::INFINITY
        };
        if p.clock >= remaining && to_wall >= remaining {
            p.x = (p.x + speed * remaining).clamp(0.0, 1.0);
            p.clock -= remaining;
            return;
        }
        if to_wall < p.clock {
            remaining -= to_wall;
            p.clock -= to_wall;
            if speed > 0.0 {
                p.x = 1.0;
                counts.right_hits += 1;
                p.v = dynamics.samplers.boundary.sample(rng, -1.0);
                counts.right_emissions += 1;
            } else {
                p.x = 0.0;
                counts.left_hits += 1;
                p.v = dynamics.samplers.boundary.sample(rng, 1.0);
                counts.left_emissions += 1;
            }
        } else {
            remaining -= p.clock;
            p.x = (p.x + speed * p.clock).clamp(0.0, 1.0);
            p.v = dynamics.samplers.velocity.sample(rng);
            p.clock = dynamics.clock(rng);
            counts.collisions += 1;
        }
    }
}

type Density = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Factorized initial datum `ρ_in(x) F(v)` with `0 ≤ ρ_in ≤ bound`.
#[derive(Clone)]
pub struct InitialData {
    density: Density,
    pub bound: f64,
    pub mass: f64,
    pub label: String,
}

impl std::fmt::Debug for InitialData {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("InitialData")
            .field("label", &self.label)
            .field("bound", &self.bound)
            .field("mass", &self.mass)
            .finish()
    }
}

impl InitialData {
    pub fn new(label: &str, density: impl Fn(f64) -> f64 + Send + Sync + 'static, bound: f64) -> Result<Self> {
        if !(bound > 0.0 && bound.is_finite()) {
            return Err(Error::InvalidParameter(format!("density bound must be positive, got {bound}")));
        }
        for k in 0..=4096 {
            let x = k as f64 / 4096.0;
            let r = density(x);
            if !r.is_finite() || r < 0.0 || r > bound {
                return Err(Error::InvalidParameter(format!(
                    "initial density {r} at x={x} is outside [0, {bound}]"
                )));
            }
        }
        let mass = quad::integrate(&density, 0.0, 1.0, Tol::new(1e-12, 1e-15)).value;
        if !(mass > 0.0 && mass.is_finite()) {
            return Err(Error::NonNormalizable(format!("initial density has mass {mass}")));
        }
        Ok(InitialData {
            density: Arc::new(density),
            bound,
            mass,
            label: label.to_string(),
        })
    }

    pub fn uniform(level: f64) -> Result<Self> {
        Self::new("uniform", move |_| level, level)
    }

    /// `1 + amplitude·cos(πx)`.
    pub fn cosine(amplitude: f64) -> Result<Self> {
        Self::new(
            "cosine",
            move |x| 1.0 + amplitude * (std::f64::consts::PI * x).cos(),
            1.0 + amplitude.abs(),
        )
    }

    pub fn density(&self, x: f64) -> f64 {
        (self.density)(x)
    }

    pub fn density_fn(&self) -> impl Fn(f64) -> f64 + Sync + '_ {
        move |x| (self.density)(x)
    }

    fn sample<R: Rng>(&self, dynamics: &Dynamics, rng: &mut R) -> Particle {
        let x = loop {
            let x: f64 = rng.random();
            let u: f64 = rng.random();
            if u * self.bound < (self.density)(x) {
                break x;
            }
        };
        Particle {
            x,
            v: dynamics.samplers.velocity.sample(rng),
            clock: dynamics.clock(rng),
        }
    }
}

fn particle_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Histogram estimate of `ρ^ε(t,·)` on a uniform partition.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DensityField {
    pub time: f64,
    pub counts: Vec<u64>,
    /// Mass carried by each particle.
    pub weight: f64,
    pub particles: u64,
}

impl DensityField {
    pub fn new(time: f64, cells: usize, weight: f64, particles: u64) -> Self {
        DensityField {
            time,
            counts: vec![0; cells],
            weight,
            particles,
        }
    }

    pub fn cells(&self) -> usize {
        self.counts.len()
    }

    pub fn cell_width(&self) -> f64 {
        1.0 / self.cells() as f64
    }

    /// Cell of `x`; the last cell is closed on the right.
    pub fn cell_of(&self, x: f64) -> usize {
        ((x * self.cells() as f64) as usize).min(self.cells() - 1)
    }

    pub fn deposit(&mut self, x: f64) {
        let k = self.cell_of(x);
        self.counts[k] += 1;
    }

    pub fn centers(&self) -> Vec<f64> {
        let h = self.cell_width();
        (0..self.cells()).map(|k| (k as f64 + 0.5) * h).collect()
    }

    pub fn averages(&self) -> Vec<f64> {
        let h = self.cell_width();
        self.counts.iter().map(|&c| c as f64 * self.weight / h).collect()
    }

    /// Binomial standard error of each cell average.
    pub fn stderr(&self) -> Vec<f64> {
        let h = self.cell_width();
        let n = self.particles as f64;
        self.counts
            .iter()
            .map(|&c| {
                let p = c as f64 / n;
                self.weight / h * (n * p * (1.0 - p)).sqrt()
            })
            .collect()
    }

    pub fn total_mass(&self) -> f64 {
        self.counts.iter().sum::<u64>() as f64 * self.weight
    }

    /// Merges neighbouring cell pairs.
    pub fn coarsen(&self) -> Result<DensityField> {
        if self.cells() % 2 != 0 {
            return Err(Error::InvalidParameter("only an even number of cells can be coarsened".into()));
        }
        Ok(DensityField {
            time: self.time,
            counts: self.counts.chunks(2).map(|c| c[0] + c[1]).collect(),
            weight: self.weight,
            particles: self.particles,
        })
    }

    fn merge(&mut self, o: &DensityField) {
        for (a, b) in self.counts.iter_mut().zip(&o.counts) {
            *a += b;
        }
    }
}

/// Two-sided normal quantile giving family-wise coverage `1 - alpha` over `m`
/// comparisons (Šidák).
pub fn family_z(m: usize, alpha: f64) -> f64 {
    let per = 1.0 - (1.0 - alpha).powf(1.0 / m.max(1) as f64);
    Normal::new(0.0, 1.0).expect("standard normal").inverse_cdf(1.0 - per / 2.0)
}

/// Family-wise level matching a single 3σ two-sided band.
pub const THREE_SIGMA_LEVEL: f64 = 0.0026997960632601965;

/// Stored ensemble; particle `i` keeps the position of its random stream.
#[derive(Debug, Clone)]
pub struct ParticleEnsemble {
    pub seed: u64,
    pub particles: Vec<Particle>,
    stream_pos: Vec<u128>,
    pub weight: f64,
    pub epoch: f64,
}

pub fn init_ensemble(data: &InitialData, count: usize, seed: u64, dynamics: &Dynamics) -> Result<ParticleEnsemble> {
    if count == 0 {
        return Err(Error::InvalidParameter("particle count must be at least 1".into()));
    }
    let (particles, stream_pos): (Vec<Particle>, Vec<u128>) = (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = particle_rng(seed, i);
            let p = data.sample(dynamics, &mut rng);
            (p, rng.get_word_pos())
        })
        .unzip();
    Ok(ParticleEnsemble {
        seed,
        particles,
        stream_pos,
        weight: data.mass / count as f64,
        epoch: 0.0,
    })
}

impl ParticleEnsemble {
    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn mass(&self) -> f64 {
        self.weight * self.len() as f64
    }

    pub fn advance(&mut self, dt: f64, dynamics: &Dynamics) -> Result<EventCounts> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidParameter(format!("dt must be positive, got {dt}")));
        }
        let seed = self.seed;
        let counts: Vec<EventCounts> = self
            .particles
            .par_chunks_mut(CHUNK)
            .zip(self.stream_pos.par_chunks_mut(CHUNK))
            .enumerate()
            .map(|(c, (ps, pos))| {
                let mut counts = EventCounts::default();
                for (j, (p, w)) in ps.iter_mut().zip(pos.iter_mut()).enumerate() {
                    let mut rng = particle_rng(seed, c * CHUNK + j);
                    rng.set_word_pos(*w);
                    fly(p, dt, dynamics, &mut rng, &mut counts);
                    *w = rng.get_word_pos();
                }
                counts
            })
            .collect();
        self.epoch += dt;
        let mut total = EventCounts::default();
        for c in &counts {
            total.merge(c);
        }
        Ok(total)
    }

    pub fn estimate_density(&self, cells: usize) -> Result<DensityField> {
        if cells == 0 {
            return Err(Error::InvalidParameter("histogram needs at least one cell".into()));
        }
        let mut d = DensityField::new(self.epoch, cells, self.weight, self.len() as u64);
        for p in &self.particles {
            d.deposit(p.x);
        }
        Ok(d)
    }
}

fn check_times(times: &[f64]) -> Result<()> {
    if times.is_empty() {
        return Err(Error::InvalidParameter("at least one snapshot time is required".into()));
    }
    let mut prev = 0.0;
    for &t in times {
        if !(t >= prev && t.is_finite()) {
            return Err(Error::TimeSupport(format!("snapshot times must be nondecreasing and nonnegative, got {t}")));
        }
        prev = t;
    }
    Ok(())
}

/// Simulates `particles` independent trajectories and hands each one's states
/// at `times` to `visit`. Chunk results are merged in chunk order.
pub fn drive<A, N, V, M>(
    dynamics: &Dynamics,
    data: &InitialData,
    particles: usize,
    seed: u64,
    times: &[f64],
    new_acc: N,
    visit: V,
    merge: M,
) -> Result<(A, EventCounts)>
where
    A: Send,
    N: Fn() -> A + Sync,
    V: Fn(&mut A, &Particle, &[Particle]) + Sync,
    M: Fn(&mut A, A),
{
    check_times(times)?;
    if particles == 0 {
        return Err(Error::InvalidParameter("particle count must be at least 1".into()));
    }
    let chunks = particles.div_ceil(CHUNK);
    let results: Vec<(A, EventCounts)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = new_acc();
            let mut counts = EventCounts::default();
            let mut states = Vec::with_capacity(times.len());
            for i in c * CHUNK..((c + 1) * CHUNK).min(particles) {
                let mut rng = particle_rng(seed, i);
                let start = data.sample(dynamics, &mut rng);
                let mut p = start;
                let mut now = 0.0;
                states.clear();
                for &t in times {
                    if t > now {
                        fly(&mut p, t - now, dynamics, &mut rng, &mut counts);
                        now = t;
                    }
                    states.push(p);
                }
                visit(&mut acc, &start, &states);
            }
            (acc, counts)
        })
        .collect();
    let mut iter = results.into_iter();
    let (mut acc, mut counts) = iter.next().expect("at least one chunk");
    for (a, c) in iter {
        merge(&mut acc, a);
        counts.merge(&c);
    }
    Ok((acc, counts))
}

#[derive(Debug, Clone)]
pub struct KineticRun {
    pub eps: f64,
    pub snapshots: Vec<DensityField>,
    pub events: EventCounts,
}

/// Histograms at `times` without storing the ensemble.
pub fn run_histograms(
    dynamics: &Dynamics,
    data: &InitialData,
    particles: usize,
    seed: u64,
    times: &[f64],
    cells: usize,
) -> Result<KineticRun> {
    if cells == 0 {
        return Err(Error::InvalidParameter("histogram needs at least one cell".into()));
    }
    let weight = data.mass / particles.max(1) as f64;
    let empty = || -> Vec<DensityField> {
        times
            .iter()
            .map(|&t| DensityField::new(t, cells, weight, particles as u64))
            .collect()
    };
    let (snapshots, events) = drive(
        dynamics,
        data,
        particles,
        seed,
        times,
        empty,
        |acc: &mut Vec<DensityField>, _, states| {
            for (d, p) in acc.iter_mut().zip(states) {
                d.deposit(p.x);
            }
        },
        |acc, other| {
            for (a, b) in acc.iter_mut().zip(&other) {
                a.merge(b);
            }
        },
    )?;
    Ok(KineticRun {
        eps: dynamics.eps,
        snapshots,
        events,
    })
}

/// Weighted sums `Σ_i ∫ ρ̂ ψ_j` per snapshot, with per-particle variance.
#[derive(Debug, Clone, Serialize)]
pub struct WeakMoments {
    pub times: Vec<f64>,
    /// `means[k][j]` estimates `∫ ρ(t_k) ψ_j`.
    pub means: Vec<Vec<f64>>,
    pub stderr: Vec<Vec<f64>>,
    pub events: EventCounts,
}

/// Estimates `∫ρ^ε(t,x)ψ_j(x)dx` for a battery of test functions.
pub fn run_weak_moments(
    dynamics: &Dynamics,
    data: &InitialData,
    particles: usize,
    seed: u64,
    times: &[f64],
    tests: &[ExtendedField],
) -> Result<WeakMoments> {
    let (nt, nj) = (times.len(), tests.len());
    let weight = data.mass / particles.max(1) as f64;
    let (sums, events) = drive(
        dynamics,
        data,
        particles,
        seed,
        times,
        || (vec![0.0; nt * nj], vec![0.0; nt * nj]),
        |acc: &mut (Vec<f64>, Vec<f64>), _, states| {
            for (k, p) in states.iter().enumerate() {
                for (j, psi) in tests.iter().enumerate() {
                    let v = psi.value(p.x);
                    acc.0[k * nj + j] += v;
                    acc.1[k * nj + j] += v * v;
                }
            }
        },
        |acc, o| {
            for (a, b) in acc.0.iter_mut().zip(&o.0) {
                *a += b;
            }
            for (a, b) in acc.1.iter_mut().zip(&o.1) {
                *a += b;
            }
        },
    )?;
    let n = particles as f64;
    let mut means = vec![vec![0.0; nj]; nt];
    let mut stderr = vec![vec![0.0; nj]; nt];
    for k in 0..nt {
        for j in 0..nj {
            let m = sums.0[k * nj + j] / n;
            let var = (sums.1[k * nj + j] / n - m * m).max(0.0) * n / (n - 1.0).max(1.0);
            means[k][j] = weight * n * m;
            stderr[k][j] = weight * n * (var / n).sqrt();
        }
    }
    Ok(WeakMoments {
        times: times.to_vec(),
        means,
        stderr,
        events,
    })
}

/// Uniform-grid table with four-point Lagrange interpolation.
#[derive(Debug, Clone)]
pub struct GridTable {
    values: Vec<f64>,
}

impl GridTable {
    pub fn tabulate(points: usize, f: impl Fn(f64) -> Result<f64> + Sync) -> Result<Self> {
        if points < 4 {
            return Err(Error::InvalidParameter("a table needs at least 4 points".into()));
        }
        let m = points - 1;
        let values = (0..=m)
            .into_par_iter()
            .map(|k| f(k as f64 / m as f64))
            .collect::<Result<Vec<f64>>>()?;
        Ok(GridTable { values })
    }

    pub fn eval(&self, x: f64) -> f64 {
        let m = self.values.len() - 1;
        let t = x.clamp(0.0, 1.0) * m as f64;
        let k = (t.floor() as usize).clamp(1, m - 2);
        let u = t - k as f64;
        let f = &self.values[k - 1..k + 3];
        // nodes at -1, 0, 1, 2
        let l0 = -u * (u - 1.0) * (u - 2.0) / 6.0;
        let l1 = (u + 1.0) * (u - 1.0) * (u - 2.0) / 2.0;
        let l2 = -(u + 1.0) * u * (u - 2.0) / 2.0;
        let l3 = (u + 1.0) * u * (u - 1.0) / 6.0;
        f[0] * l0 + f[1] * l1 + f[2] * l2 + f[3] * l3
    }
}

/// Monte Carlo evaluation of the kinetic weak identity for
/// `Φ(t,x,v) = θ(t) φ^ε(x,v)`, `θ(t) = (1 - t/T)³`:
/// `∬ f ∂ₜΦ + ∫ f_in Φ(0) + ∬ ρ θ 𝓛^ε[ψ^ε] = 0`.
#[derive(Debug, Clone, Serialize)]
pub struct WeakResidual {
    pub eps: f64,
    pub horizon: f64,
    pub residual: f64,
    pub stderr: f64,
    /// The three terms: time derivative, initial datum, generator.
    pub terms: [f64; 3],
    pub particles: usize,
    /// Largest deviation of the interpolated generator from direct evaluation
    /// at off-grid probe points.
    pub table_error: f64,
    pub events: EventCounts,
}

#[allow(clippy::too_many_arguments)]
pub fn weak_residual(
    model: &Model,
    dynamics: &Dynamics,
    data: &InitialData,
    psi: &CorrectedTestFunction,
    horizon: f64,
    intervals: usize,
    particles: usize,
    seed: u64,
) -> Result<WeakResidual> {
    let eps = dynamics.eps;
    if (psi.eps - eps).abs() > 1e-15 * eps {
        return Err(Error::InvalidParameter(format!(
            "test function corrected at eps={} used at eps={eps}",
            psi.eps
        )));
    }
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::TimeSupport(format!("time horizon must be positive, got {horizon}")));
    }
    if intervals < 2 || intervals % 2 != 0 {
        return Err(Error::TimeSupport(format!("Simpson rule needs an even interval count, got {intervals}")));
    }
    let field = &psi.composite;
    let table = GridTable::tabulate(2049, |x| l_eps(model, field, x, eps))?;
    let table_error = (0..64)
        .map(|k| {
            let x = (k as f64 + 0.37) / 64.0;
            l_eps(model, field, x, eps).map(|d| (d - table.eval(x)).abs())
        })
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .fold(0.0, f64::max);

    let h = horizon / intervals as f64;
    let times: Vec<f64> = (0..=intervals).map(|k| k as f64 * h).collect();
    let simpson: Vec<f64> = (0..=intervals)
        .map(|k| {
            let w = if k == 0 || k == intervals {
                1.0
            } else if k % 2 == 1 {
                4.0
            } else {
                2.0
            };
            w * h / 3.0
        })
        .collect();
    let theta = |t: f64| (1.0 - t / horizon).powi(3);
    let theta_dot = |t: f64| -3.0 / horizon * (1.0 - t / horizon).powi(2);
    let weight = data.mass / particles.max(1) as f64;

    // per-particle functionals: [sum r, sum r², term sums ×3]
    let ((sum, sq, terms, failure), events) = drive(
        dynamics,
        data,
        particles,
        seed,
        &times,
        || (0.0, 0.0, [0.0; 3], None::<Error>),
        |acc: &mut (f64, f64, [f64; 3], Option<Error>), start, states| {
            if acc.3.is_some() {
                return;
            }
            let mut parts = [0.0; 3];
            for (k, p) in states.iter().enumerate() {
                let t = times[k];
                if k > 0 && k < intervals {
                    // the endpoints carry θ(T) = θ'(T) = 0 or are handled below
                }
                match phi_eps(model, field, p.x, p.v, eps) {
                    Ok(phi) => parts[0] += simpson[k] * theta_dot(t) * phi,
                    Err(e) => {
                        acc.3 = Some(e);
                        return;
                    }
                }
                parts[2] += simpson[k] * theta(t) * table.eval(p.x);
            }
            match phi_eps(model, field, start.x, start.v, eps) {
                Ok(phi) => parts[1] = theta(0.0) * phi,
                Err(e) => {
                    acc.3 = Some(e);
                    return;
                }
            }
            let r = weight * (parts[0] + parts[1] + parts[2]);
            acc.0 += r;
            acc.1 += r * r;
            for j in 0..3 {
                acc.2[j] += weight * parts[j];
            }
        },
        |acc, o| {
            acc.0 += o.0;
            acc.1 += o.1;
            for j in 0..3 {
                acc.2[j] += o.2[j];
            }
            if acc.3.is_none() {
                acc.3 = o.3;
            }
        },
    )?;
    if let Some(e) = failure {
        return Err(e);
    }
    let n = particles as f64;
    let mean = sum / n;
    let var = (sq / n - mean * mean).max(0.0) * n / (n - 1.0).max(1.0);
    Ok(WeakResidual {
        eps,
        horizon,
        residual: sum,
        stderr: (n * var).sqrt(),
        terms,
        particles,
        table_error,
        events,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibria::{KernelSettings, ModelParams};
    use crate::field::Cosine;
    use crate::nonlocal_ops::QuadratureSpec;
    use crate::testfn::{correct, Cutoff};
    use std::sync::OnceLock;

    fn model() -> &'static (Model, Samplers) {
        static M: OnceLock<(Model, Samplers)> = OnceLock::new();
        M.get_or_init(|| {
            let m = Model::with_settings(
                ModelParams::new(0.75, 1.0).unwrap(),
                KernelSettings {
                    points_per_decade: 512,
                    ..Default::default()
                },
                QuadratureSpec::default(),
            )
            .unwrap();
            let s = Samplers::new(&m).unwrap();
            (m, s)
        })
    }

    #[test]
    fn initial_data_validation() {
        assert!(InitialData::new("neg", |x| x - 0.5, 1.0).is_err());
        assert!(InitialData::new("big", |_| 2.0, 1.0).is_err());
        assert!(matches!(InitialData::new("zero", |_| 0.0, 1.0), Err(Error::NonNormalizable(_))));
        let c = InitialData::cosine(0.5).unwrap();
        assert!((c.mass - 1.0).abs() < 1e-12);
        assert_eq!(c.bound, 1.5);
    }

    #[test]
    fn initial_positions_are_uniform() {
        let (m, s) = model();
        let d = Dynamics::new(m, s, 0.25).unwrap();
        let ens = init_ensemble(&InitialData::uniform(1.0).unwrap(), 20_000, 1, &d).unwrap();
        let mut xs: Vec<f64> = ens.particles.iter().map(|p| p.x).collect();
        xs.sort_by(f64::total_cmp);
        let n = xs.len() as f64;
        let ks = xs
            .iter()
            .enumerate()
            .map(|(i, &x)| ((i as f64 + 1.0) / n - x).abs().max((x - i as f64 / n).abs()))
            .fold(0.0, f64::max);
        // Kolmogorov band at 3σ-equivalent level
        assert!(ks * n.sqrt() < 1.95, "{ks}");
        assert!((ens.mass() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn count_mass_and_wall_placement() {
        let (m, s) = model();
        let d = Dynamics::new(m, s, 0.5).unwrap();
        let mut ens = init_ensemble(&InitialData::cosine(0.5).unwrap(), 2000, 4, &d).unwrap();
        let mass = ens.mass();
        let mut total = EventCounts::default();
        for _ in 0..1000 {
            total.merge(&ens.advance(1e-3, &d).unwrap());
        }
        assert_eq!(ens.len(), 2000);
        assert_eq!(ens.mass(), mass);
        assert!(ens.particles.iter().all(|p| (0.0..=1.0).contains(&p.x) && p.v.is_finite() && p.v != 0.0));
        assert_eq!(total.left_hits, total.left_emissions);
        assert_eq!(total.right_hits, total.right_emissions);
        assert!(total.left_hits > 0 && total.right_hits > 0);
        assert!((ens.epoch - 1.0).abs() < 1e-12);
    }

    #[test]
    fn wall_hit_places_particle_on_the_wall() {
        let (m, s) = model();
        let d = Dynamics::new(m, s, 0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut c = EventCounts::default();
        let mut p = Particle {
            x: 0.9,
            v: 1.0,
            clock: 10.0,
        };
        let to_wall = 0.1 / d.speed_scale;
        fly(&mut p, to_wall * (1.0 + 1e-12), &d, &mut rng, &mut c);
        assert_eq!(c.right_hits, 1);
        assert!(p.v < 0.0 && p.x < 1.0 && p.x > 1.0 - 1e-9);
        assert!((p.clock - (10.0 - to_wall * (1.0 + 1e-12))).abs() < 1e-12);
    }

    #[test]
    fn stored_and_streamed_runs_agree() {
        let (m, s) = model();
        let d = Dynamics::new(m, s, 0.25).unwrap();
        let data = InitialData::cosine(0.5).unwrap();
        let n = 5000;
        let mut ens = init_ensemble(&data, n, 77, &d).unwrap();
        ens.advance(0.05, &d).unwrap();
        ens.advance(0.05, &d).unwrap();
        let stored = ens.estimate_density(32).unwrap();
        let run = run_histograms(&d, &data, n, 77, &[0.05, 0.1], 32).unwrap();
        assert_eq!(stored.counts, run.snapshots[1].counts);
    }

    #[test]
    fn histogram_bookkeeping() {
        let (m, s) = model();
        let d = Dynamics::new(m, s, 0.5).unwrap();
        let run = run_histograms(&d, &InitialData::uniform(1.0).unwrap(), 40_000, 3, &[0.0, 0.2], 64).unwrap();
        for snap in &run.snapshots {
            assert_eq!(snap.counts.iter().sum::<u64>(), 40_000);
            assert!((snap.total_mass() - 1.0).abs() < 1e-12);
            let coarse = snap.coarsen().unwrap();
            let direct = {
                // re-bin the same run on 32 cells
                let r = run_histograms(&d, &InitialData::uniform(1.0).unwrap(), 40_000, 3, &[0.0, 0.2], 32).unwrap();
                r.snapshots.iter().find(|x| x.time == snap.time).unwrap().clone()
            };
            assert_eq!(coarse.counts, direct.counts);
            let z = family_z(snap.cells(), THREE_SIGMA_LEVEL);
            for (a, e) in snap.averages().iter().zip(snap.stderr()) {
                assert!((a - 1.0).abs() <= z * e, "{a} {e}");
            }
        }
    }

    #[test]
    fn sidak_quantile() {
        assert!((family_z(1, THREE_SIGMA_LEVEL) - 3.0).abs() < 1e-9);
        assert!(family_z(100, THREE_SIGMA_LEVEL) > 3.0);
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let (m, s) = model();
        let d = Dynamics::new(m, s, 0.25).unwrap();
        let data = InitialData::cosine(0.5).unwrap();
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let two = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let a = one.install(|| run_histograms(&d, &data, 10_000, 5, &[0.1], 16).unwrap());
        let b = two.install(|| run_histograms(&d, &data, 10_000, 5, &[0.1], 16).unwrap());
        assert_eq!(a.snapshots, b.snapshots);
        assert_eq!(a.events, b.events);
    }

    #[test]
    fn grid_table_interpolates_cubics_exactly() {
        let t = GridTable::tabulate(33, |x| Ok(x * x * x - 2.0 * x)).unwrap();
        for x in [0.0, 0.013, 0.5, 0.977, 1.0] {
            assert!((t.eval(x) - (x * x * x - 2.0 * x)).abs() < 1e-13);
        }
    }

    #[test]
    fn weak_identity_holds_within_noise() {
        let (m, s) = model();
        let eps = 0.25;
        let d = Dynamics::new(m, s, eps).unwrap();
        let data = InitialData::cosine(0.5).unwrap();
        let psi = correct(m, &ExtendedField::profile(Cosine { mode: 1.0, amplitude: 1.0 }), eps, &Cutoff::default()).unwrap();
        let r = weak_residual(m, &d, &data, &psi, 0.5, 40, 20_000, 8).unwrap();
        assert!(r.residual.abs() <= 3.0 * r.stderr, "{r:?}");
        assert!(r.stderr < 0.05 * r.terms[1].abs());
        let zero = correct(m, &ExtendedField::constant(0.0), eps, &Cutoff::default()).unwrap();
        let z = weak_residual(m, &d, &data, &zero, 0.5, 4, 100, 1).unwrap();
        assert_eq!(z.residual, 0.0);
        assert!(weak_residual(m, &d, &data, &psi, 0.5, 3, 100, 1).is_err());
    }
}

//! Exact samplers for `F` and for the diffuse-reflection law `c₀ F(w) |w|`.
//!
//! On `|v| ≤ V_max` the inverse CDF is tabulated on `v_k = expm1(k h)` with
//! Gauss–Legendre cell masses, then refined by Newton steps on the exact local
//! CDF. Beyond `V_max` a Pareto proposal with the true tail exponent is
//! thinned by `v^p/(1+v^p)`, which is exact.

use rand::Rng;

use super::{ConstantSet, ModelParams};
use crate::error::{Error, Result};
use crate::quad;

pub const SAMPLER_VMAX: f64 = 1e3;
pub const SAMPLER_NODES: usize = 1 << 14;

const CELL_RULE: usize = 8;

#[derive(Debug, Clone)]
struct HalfLine {
    gamma: f64,
    p: f64,
    /// Multiplies `w^weight_power F(w)`.
    scale: f64,
    weight_power: i32,
    nodes: Vec<f64>,
    cdf: Vec<f64>,
    table_mass: f64,
    /// Pareto exponent of the envelope `w^{weight_power - p}` minus one.
    pareto: f64,
}

impl HalfLine {
    fn new(gamma: f64, p: f64, scale: f64, weight_power: i32, tail_mass: f64) -> Result<Self> {
        let n = SAMPLER_NODES;
        let h = SAMPLER_VMAX.ln_1p() / n as f64;
        let nodes: Vec<f64> = (0..=n).map(|k| (k as f64 * h).exp_m1()).collect();
        let mut hl = HalfLine {
            gamma,
            p,
            scale,
            weight_power,
            nodes,
            cdf: Vec::with_capacity(n + 1),
            table_mass: 0.0,
            pareto: p - 1.0 - weight_power as f64,
        };
        let mut acc = 0.0;
        hl.cdf.push(0.0);
        for k in 0..n {
            acc += hl.cell_mass(hl.nodes[k], hl.nodes[k + 1]);
            hl.cdf.push(acc);
        }
        hl.table_mass = acc;
        let total = acc + tail_mass;
        if (total - 1.0).abs() > 1e-10 {
            return Err(Error::Quadrature(format!(
                "sampler normalization off by {:.3e}",
                total - 1.0
            )));
        }
        Ok(hl)
    }

    #[inline]
    fn density(&self, w: f64) -> f64 {
        let base = self.scale * self.gamma / (1.0 + w.powf(self.p));
        if self.weight_power == 1 {
            base * w
        } else {
            base
        }
    }

    #[inline]
    fn cell_mass(&self, a: f64, b: f64) -> f64 {
        quad::gauss(|w| self.density(w), a, b, CELL_RULE)
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        if u >= self.table_mass {
            return self.sample_tail(rng);
        }
        self.invert(u)
    }

    /// Inverse CDF on the tabulated range, `0 ≤ u < table_mass`.
    fn invert(&self, u: f64) -> f64 {
        // cdf[k] <= u < cdf[k+1]
        let k = self.cdf.partition_point(|&c| c <= u) - 1;
        let k = k.min(SAMPLER_NODES - 1);
        let (a, b) = (self.nodes[k], self.nodes[k + 1]);
        let (ca, cb) = (self.cdf[k], self.cdf[k + 1]);
        let target = u - ca;
        let width = cb - ca;
        if width <= 0.0 {
            return a;
        }
        // cubic Hermite guess using dv/dC = 1/f at the cell ends
        let t = target / width;
        let (fa, fb) = (self.density(a), self.density(b));
        let mut v = if fa > 0.0 {
            let (ma, mb) = (width / fa, width / fb);
            let h00 = (1.0 + 2.0 * t) * (1.0 - t) * (1.0 - t);
            let h10 = t * (1.0 - t) * (1.0 - t);
            let h01 = t * t * (3.0 - 2.0 * t);
            let h11 = t * t * (t - 1.0);
            h00 * a + h10 * ma + h01 * b + h11 * mb
        } else {
            a + t * (b - a)
        };
        let (mut lo, mut hi) = (a, b);
        for _ in 0..40 {
            if !(v > lo && v < hi) {
                v = 0.5 * (lo + hi);
            }
            let g = self.cell_mass(a, v) - target;
            if g > 0.0 {
                hi = v;
            } else {
                lo = v;
            }
            let d = self.density(v);
            let step = if d > 0.0 { g / d } else { 0.0 };
            let next = v - step;
            if step.abs() <= 1e-14 * v.max(1e-300) || hi - lo <= 1e-15 * hi {
                v = next.clamp(a, b);
                break;
            }
            v = next;
        }
        v.clamp(a, b)
    }

    fn sample_tail<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        loop {
            let u: f64 = 1.0 - rng.random::<f64>();
            let w = SAMPLER_VMAX * u.powf(-1.0 / self.pareto);
            let wp = w.powf(self.p);
            let accept = if wp.is_finite() { wp / (1.0 + wp) } else { 1.0 };
            if rng.random::<f64>() < accept {
                return w;
            }
        }
    }
}

/// `∫_V^∞ w^q γ/(1+w^p) dw` by the convergent series in `w^{-p}`.
fn tail_integral(gamma: f64, p: f64, q: f64, v: f64) -> f64 {
    let mut sum = 0.0;
    for k in 0..12 {
        let e = (k + 1) as f64 * p - q - 1.0;
        let term = v.powf(-e) / e;
        sum += if k % 2 == 0 { term } else { -term };
    }
    gamma * sum
}

/// Sampler for the equilibrium `F`.
#[derive(Debug, Clone)]
pub struct VelocitySampler {
    half: HalfLine,
}

impl VelocitySampler {
    pub fn new(params: &ModelParams) -> Result<Self> {
        let gamma = params.gamma();
        let p = params.tail_exponent();
        let tail = 2.0 * tail_integral(gamma, p, 0.0, SAMPLER_VMAX);
        Ok(VelocitySampler {
            half: HalfLine::new(gamma, p, 2.0, 0, tail)?,
        })
    }

    /// Probability mass `P(|v| > V_max)`.
    pub fn tail_mass(&self) -> f64 {
        1.0 - self.half.table_mass
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let sign = rng.random::<bool>();
        let w = self.half.sample(rng);
        if sign {
            w
        } else {
            -w
        }
    }
}

/// Sampler for re-emission at a wall: density `c₀ F(w) |w|` on the inward
/// half-line.
#[derive(Debug, Clone)]
pub struct BoundarySampler {
    half: HalfLine,
}

impl BoundarySampler {
    pub fn new(params: &ModelParams, constants: &ConstantSet) -> Result<Self> {
        let gamma = params.gamma();
        let p = params.tail_exponent();
        let tail = constants.c0 * tail_integral(gamma, p, 1.0, SAMPLER_VMAX);
        Ok(BoundarySampler {
            half: HalfLine::new(gamma, p, constants.c0, 1, tail)?,
        })
    }

    /// Velocity with the sign of `inward` (positive at the left wall).
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, inward: f64) -> f64 {
        let w = self.half.sample(rng);
        if inward >= 0.0 {
            w
        } else {
            -w
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibria::build_constants;
    use crate::quad::Tol;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    fn setup(s: f64) -> (ModelParams, ConstantSet) {
        let p = ModelParams::new(s, 1.0).unwrap();
        let c = build_constants(&p).unwrap();
        (p, c)
    }

    /// `∫_a^b g(w) F(w) dw` on the half-line by quadrature, b may be infinite.
    fn f_moment(params: &ModelParams, g: impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
        let f = params.equilibrium();
        let h = |w: f64| g(w) * f.density(w);
        if b.is_finite() {
            return quad::adaptive(&h, &[a, (a + 1.0).min(b), b], Tol::new(1e-12, 0.0)).value;
        }
        let lo = a.max(1.0);
        let head = if a < 1.0 { quad::integrate(&h, a, 1.0, Tol::new(1e-12, 0.0)).value } else { 0.0 };
        // w = lo / t
        let tail = quad::integrate(
            |t: f64| if t == 0.0 { 0.0 } else { h(lo / t) * lo / (t * t) },
            0.0,
            1.0,
            Tol::new(1e-12, 0.0),
        )
        .value;
        head + tail
    }

    #[test]
    fn symmetric_median() {
        let (p, _) = setup(0.75);
        let smp = VelocitySampler::new(&p).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 1_000_000;
        let neg = (0..n).filter(|_| smp.sample(&mut rng) < 0.0).count() as f64;
        let sigma = (0.25 / n as f64).sqrt();
        assert!((neg / n as f64 - 0.5).abs() < 3.0 * sigma);
    }

    #[test]
    fn fractional_moment_and_tail_probability() {
        let (p, _) = setup(0.75);
        let smp = VelocitySampler::new(&p).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 1_000_000;
        let xs: Vec<f64> = (0..n).map(|_| smp.sample(&mut rng)).collect();
        let m: Vec<f64> = xs.iter().map(|v| v.abs().sqrt()).collect();
        let mean = m.iter().sum::<f64>() / n as f64;
        let var = m.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let exact = 2.0 * f_moment(&p, |w| w.sqrt(), 0.0, f64::INFINITY);
        assert!((mean - exact).abs() < 3.0 * (var / n as f64).sqrt(), "{mean} {exact}");
        let big = xs.iter().filter(|v| v.abs() > 10.0).count() as f64 / n as f64;
        let q = 2.0 * f_moment(&p, |_| 1.0, 10.0, f64::INFINITY);
        assert!((big - q).abs() < 3.0 * (q * (1.0 - q) / n as f64).sqrt(), "{big} {q}");
    }

    #[test]
    fn tail_mass_matches_series() {
        let (p, _) = setup(0.6);
        let smp = VelocitySampler::new(&p).unwrap();
        let q = 2.0 * f_moment(&p, |_| 1.0, SAMPLER_VMAX, f64::INFINITY);
        assert!((smp.tail_mass() - q).abs() < 1e-10 * q.max(1e-6) + 1e-13);
    }

    fn chi_square_against(
        sample: &mut dyn FnMut() -> f64,
        cell_prob: &dyn Fn(f64, f64) -> f64,
        edges: &[f64],
        n: usize,
    ) -> f64 {
        let mut counts = vec![0usize; edges.len() - 1];
        for _ in 0..n {
            let v = sample();
            let k = edges.partition_point(|&e| e <= v);
            if k >= 1 && k < edges.len() {
                counts[k - 1] += 1;
            }
        }
        let mut stat = 0.0;
        for (k, &c) in counts.iter().enumerate() {
            let e = n as f64 * cell_prob(edges[k], edges[k + 1]);
            stat += (c as f64 - e).powi(2) / e;
        }
        let dof = (edges.len() - 2) as f64;
        1.0 - ChiSquared::new(dof).unwrap().cdf(stat)
    }

    fn edges() -> Vec<f64> {
        let mut e = vec![f64::NEG_INFINITY, -1e3, -100.0, -20.0, -5.0, -2.0, -1.0, -0.5, -0.2, 0.0];
        let pos: Vec<f64> = e[1..].iter().rev().map(|x| -x).filter(|x| *x > 0.0).collect();
        e.extend(pos);
        e.push(f64::INFINITY);
        e
    }

    #[test]
    fn velocity_chi_square() {
        for s in [0.6, 0.75, 0.9] {
            let (p, _) = setup(s);
            let smp = VelocitySampler::new(&p).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            let prob = |a: f64, b: f64| {
                let (lo, hi) = (a.abs().min(b.abs()), a.abs().max(b.abs()));
                f_moment(&p, |_| 1.0, lo, hi)
            };
            let pv = chi_square_against(&mut || smp.sample(&mut rng), &prob, &edges(), 1_000_000);
            assert!(pv > 1e-3, "s={s} p-value {pv}");
        }
    }

    #[test]
    fn boundary_chi_square_and_sign() {
        for s in [0.6, 0.75, 0.9] {
            let (p, c) = setup(s);
            let smp = BoundarySampler::new(&p, &c).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(4);
            let edges = vec![0.0, 0.1, 0.3, 0.6, 1.0, 2.0, 4.0, 10.0, 50.0, 1e3, f64::INFINITY];
            let prob = |a: f64, b: f64| c.c0 * f_moment(&p, |w| w, a, b);
            let pv = chi_square_against(&mut || smp.sample(&mut rng, 1.0), &prob, &edges, 1_000_000);
            assert!(pv > 1e-3, "s={s} p-value {pv}");
            for _ in 0..10_000 {
                assert!(smp.sample(&mut rng, -1.0) < 0.0);
                assert!(smp.sample(&mut rng, 1.0) > 0.0);
            }
        }
    }

    #[test]
    fn boundary_truncated_moment() {
        // E|w| diverges for every s < 1, so compare E[min(w, 10)]
        for s in [0.6, 0.75, 0.9] {
            let (p, c) = setup(s);
            let smp = BoundarySampler::new(&p, &c).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let n = 1_000_000;
            let xs: Vec<f64> = (0..n).map(|_| smp.sample(&mut rng, 1.0).min(10.0)).collect();
            let mean = xs.iter().sum::<f64>() / n as f64;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            let exact =
                c.c0 * (f_moment(&p, |w| w * w, 0.0, 10.0) + 10.0 * f_moment(&p, |w| w, 10.0, f64::INFINITY));
            assert!((mean - exact).abs() < 3.0 * (var / n as f64).sqrt(), "s={s}: {mean} {exact}");
        }
    }

    #[test]
    fn inverse_is_accurate_at_cell_interiors() {
        let (p, _) = setup(0.75);
        let smp = VelocitySampler::new(&p).unwrap();
        for &u in &[1e-9, 0.1, 0.37, 0.5, 0.9, 0.99, 0.9999] {
            let v = smp.half.invert(u);
            let c = 2.0 * f_moment(&p, |_| 1.0, 0.0, v);
            assert!((c - u).abs() < 1e-11, "u={u} v={v} c={c}");
        }
    }
}

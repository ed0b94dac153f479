//! Quadrature building blocks.
//!
//! Adaptive Gauss–Kronrod (7/15) with a global error heap, cached
//! Gauss–Legendre and Gauss–Jacobi rules, and an integrator for integrands
//! carrying an algebraic factor `h^beta` at the left end of the range.

use std::collections::{BinaryHeap, HashMap};
use std::num::NonZeroUsize;
use std::sync::{Arc, Mutex, OnceLock};

use gauss_quad::{FiniteAboveNegOneF64, GaussJacobi, GaussLegendre};

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// Tolerances for adaptive integration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tol {
    pub rel: f64,
    pub abs: f64,
    pub max_intervals: usize,
}

impl Tol {
    pub const fn new(rel: f64, abs: f64) -> Self {
        Tol {
            rel,
            abs,
            max_intervals: 4000,
        }
    }
}

impl Default for Tol {
    fn default() -> Self {
        Tol::new(1e-10, 1e-14)
    }
}

/// Result of an adaptive integration.
#[derive(Debug, Clone, Copy)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
    pub evaluations: usize,
    pub converged: bool,
}

impl Estimate {
    /// Value if converged, otherwise a quadrature error naming `what`.
    pub fn ok(self, what: &str) -> Result<f64> {
        if self.converged {
            Ok(self.value)
        } else {
            Err(Error::Quadrature(format!(
                "{what}: value {:.6e} with error estimate {:.2e} after {} evaluations",
                self.value, self.error, self.evaluations
            )))
        }
    }
}

struct Piece {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Piece {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Piece {}
impl PartialOrd for Piece {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Piece {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.error.total_cmp(&other.error)
    }
}

/// One 7/15 Gauss–Kronrod panel. Returns (kronrod value, error estimate).
pub fn gk15<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut rk = fc * WGK[7];
    let mut rg = fc * WG[3];
    let mut fv1 = [0.0; 7];
    let mut fv2 = [0.0; 7];
    for j in 0..7 {
        let dx = h * XGK[j];
        let f1 = f(c - dx);
        let f2 = f(c + dx);
        fv1[j] = f1;
        fv2[j] = f2;
        rk += WGK[j] * (f1 + f2);
        if j % 2 == 1 {
            rg += WG[j / 2] * (f1 + f2);
        }
    }
    // QUADPACK-style error scaling
    let mean = rk * 0.5;
    let mut asc = WGK[7] * (fc - mean).abs();
    for j in 0..7 {
        asc += WGK[j] * ((fv1[j] - mean).abs() + (fv2[j] - mean).abs());
    }
    let asc = asc * h.abs();
    let mut err = ((rk - rg) * h).abs();
    if asc != 0.0 && err != 0.0 {
        err = asc * (1.0f64).min((200.0 * err / asc).powf(1.5));
    }
    (rk * h, err.max(50.0 * f64::EPSILON * (rk * h).abs()))
}

/// Global adaptive integration over consecutive breakpoints `points`
/// (at least two, increasing).
pub fn adaptive<F: FnMut(f64) -> f64>(mut f: F, points: &[f64], tol: Tol) -> Estimate {
    let mut heap = BinaryHeap::new();
    let mut value = 0.0;
    let mut error = 0.0;
    let mut magnitude = 0.0;
    let mut evals = 0;
    let mut frozen_err = 0.0;
    let mut frozen_val = 0.0;
    for w in points.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b <= a {
            continue;
        }
        let (v, e) = gk15(&mut f, a, b);
        evals += 15;
        value += v;
        error += e;
        magnitude += v.abs();
        heap.push(Piece { a, b, value: v, error: e });
    }
    // below 100 ulp of Σ|pieces| the error estimate is pure rounding
    let target = |v: f64, m: f64| tol.abs.max(tol.rel * v.abs()).max(100.0 * f64::EPSILON * m);
    loop {
        while error > target(value, magnitude) && heap.len() < tol.max_intervals {
            let Some(p) = heap.pop() else { break };
            let m = 0.5 * (p.a + p.b);
            if m <= p.a || m >= p.b {
                // cannot split further; freeze its contribution
                frozen_err += p.error;
                frozen_val += p.value;
                continue;
            }
            let (v1, e1) = gk15(&mut f, p.a, m);
            let (v2, e2) = gk15(&mut f, m, p.b);
            evals += 30;
            value += v1 + v2 - p.value;
            error += e1 + e2 - p.error;
            magnitude += v1.abs() + v2.abs() - p.value.abs();
            heap.push(Piece { a: p.a, b: m, value: v1, error: e1 });
            heap.push(Piece { a: m, b: p.b, value: v2, error: e2 });
        }
        // recompute sums to shed accumulated cancellation
        value = frozen_val;
        error = frozen_err;
        magnitude = frozen_val.abs();
        for p in heap.iter() {
            value += p.value;
            error += p.error;
            magnitude += p.value.abs();
        }
        // a NaN estimate also stops here
        if !(error > target(value, magnitude)) || heap.is_empty() || heap.len() >= tol.max_intervals {
            break;
        }
    }
    let (v, e, m) = (value, error, magnitude);
    Estimate {
        value: v,
        error: e,
        evaluations: evals,
        converged: e <= target(v, m) * 1.000_001,
    }
}

/// Adaptive integration on a single interval.
pub fn integrate<F: FnMut(f64) -> f64>(f: F, a: f64, b: f64, tol: Tol) -> Estimate {
    if a == b {
        return Estimate { value: 0.0, error: 0.0, evaluations: 0, converged: true };
    }
    if b < a {
        let mut e = adaptive(f, &[b, a], tol);
        e.value = -e.value;
        return e;
    }
    adaptive(f, &[a, b], tol)
}

type Rule = Arc<Vec<(f64, f64)>>;

fn rule_cache() -> &'static Mutex<HashMap<(usize, u64), Rule>> {
    static CACHE: OnceLock<Mutex<HashMap<(usize, u64), Rule>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Gauss–Legendre rule on [0,1]: (node, weight) pairs.
pub fn legendre01(n: usize) -> Rule {
    let key = (n, u64::MAX);
    if let Some(r) = rule_cache().lock().unwrap().get(&key) {
        return r.clone();
    }
    let gl = GaussLegendre::new(NonZeroUsize::new(n.max(1)).unwrap());
    let rule: Vec<(f64, f64)> = gl
        .as_node_weight_pairs()
        .iter()
        .map(|&(x, w)| (0.5 * (x + 1.0), 0.5 * w))
        .collect();
    let rule = Arc::new(rule);
    rule_cache().lock().unwrap().insert(key, rule.clone());
    rule
}

/// Gauss–Jacobi rule on [0,1] for the weight `h^beta`: (node, weight) pairs.
pub fn jacobi01(n: usize, beta: f64) -> Rule {
    let key = (n, beta.to_bits());
    if let Some(r) = rule_cache().lock().unwrap().get(&key) {
        return r.clone();
    }
    let gj = GaussJacobi::new(
        NonZeroUsize::new(n.max(1)).unwrap(),
        FiniteAboveNegOneF64::new(0.0).unwrap(),
        FiniteAboveNegOneF64::new(beta).expect("jacobi exponent must exceed -1"),
    );
    let scale = 0.5f64.powf(1.0 + beta);
    let rule: Vec<(f64, f64)> = gj
        .as_node_weight_pairs()
        .iter()
        .map(|&(x, w)| (0.5 * (x + 1.0), w * scale))
        .collect();
    let rule = Arc::new(rule);
    rule_cache().lock().unwrap().insert(key, rule.clone());
    rule
}

/// Fixed Gauss–Legendre integral of `f` over [a,b].
pub fn gauss<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, n: usize) -> f64 {
    let r = legendre01(n);
    let h = b - a;
    r.iter().map(|&(x, w)| w * f(a + h * x)).sum::<f64>() * h
}

/// `∫_0^len h^beta q(h) dh` for `q` smooth near `h = 0`.
///
/// A Gauss–Jacobi panel covers `[0, len/64]`; the rest is adaptive with
/// geometric breakpoints.
pub fn algebraic_left<F: FnMut(f64) -> f64>(
    mut q: F,
    len: f64,
    beta: f64,
    nodes: usize,
    breakpoints: &[f64],
    tol: Tol,
) -> Estimate {
    if len <= 0.0 {
        return Estimate { value: 0.0, error: 0.0, evaluations: 0, converged: true };
    }
    let delta = len / 64.0;
    let rule = jacobi01(nodes, beta);
    let head: f64 = rule.iter().map(|&(x, w)| w * q(delta * x)).sum::<f64>() * delta.powf(1.0 + beta);
    let mut pts = vec![delta];
    let mut p = delta;
    while p < len {
        p = (p * 4.0).min(len);
        pts.push(p);
    }
    pts.extend(breakpoints.iter().copied().filter(|&b| b > delta && b < len));
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    let tail_tol = Tol {
        abs: tol.abs.max(tol.rel * head.abs()),
        ..tol
    };
    let mut est = adaptive(|h| h.powf(beta) * q(h), &pts, tail_tol);
    est.value += head;
    est.evaluations += nodes;
    est
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kronrod_weights_are_consistent() {
        let sum: f64 = 2.0 * WGK[..7].iter().sum::<f64>() + WGK[7];
        assert!((sum - 2.0).abs() < 1e-15);
        let gsum: f64 = 2.0 * WG[..3].iter().sum::<f64>() + WG[3];
        assert!((gsum - 2.0).abs() < 1e-15);
        // K15 is exact through degree 22
        let (v, _) = gk15(&mut |x: f64| x.powi(22), 0.0, 1.0);
        assert!((v - 1.0 / 23.0).abs() < 1e-15);
    }

    #[test]
    fn adaptive_handles_endpoint_singularity() {
        let e = adaptive(|x: f64| x.powf(-0.7), &[0.0, 1.0], Tol::new(1e-11, 0.0));
        assert!(e.converged);
        assert!((e.value - 1.0 / 0.3).abs() < 1e-9, "{}", e.value);
    }

    #[test]
    fn adaptive_oscillatory() {
        let e = integrate(|x: f64| (50.0 * x).cos(), 0.0, 3.0, Tol::new(1e-12, 1e-15));
        assert!((e.value - (150.0f64).sin() / 50.0).abs() < 1e-12);
    }

    #[test]
    fn reversed_limits_flip_sign() {
        let a = integrate(|x: f64| x.exp(), 0.0, 1.0, Tol::default()).value;
        let b = integrate(|x: f64| x.exp(), 1.0, 0.0, Tol::default()).value;
        assert_eq!(a, -b);
    }

    #[test]
    fn jacobi_rule_integrates_weighted_monomials() {
        let beta = -0.4;
        let r = jacobi01(12, beta);
        for k in 0..10 {
            let v: f64 = r.iter().map(|&(x, w)| w * x.powi(k)).sum();
            assert!((v - 1.0 / (k as f64 + 1.0 + beta)).abs() < 1e-13, "k={k}");
        }
    }

    #[test]
    fn algebraic_left_matches_closed_form() {
        // ∫_0^2 h^{-0.5} cos(h) dh via substitution h = t^2
        let exact = integrate(|t: f64| 2.0 * (t * t).cos(), 0.0, 2f64.sqrt(), Tol::new(1e-14, 0.0)).value;
        let e = algebraic_left(|h: f64| h.cos(), 2.0, -0.5, 20, &[], Tol::new(1e-12, 0.0));
        assert!(e.converged);
        assert!((e.value - exact).abs() < 1e-12);
    }

    #[test]
    fn legendre_rule_exact_for_polynomials() {
        let v = gauss(|x| 7.0 * x.powi(6), 0.0, 2.0, 4);
        assert!((v - 128.0).abs() < 1e-11);
    }
}

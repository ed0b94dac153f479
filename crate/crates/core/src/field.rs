//! Functions on [0,1] together with their constant extension to the line.

use std::fmt::Debug;
use std::sync::Arc;

use crate::error::{Error, Result};

/// A function on [0,1] with its first derivative.
pub trait Profile: Send + Sync + Debug {
    fn value(&self, x: f64) -> f64;
    fn derivative(&self, x: f64) -> f64;
    /// Hölder exponent of the profile at the endpoints (1 for smooth profiles).
    fn endpoint_exponent(&self) -> f64 {
        1.0
    }
    /// Interior points where the derivative jumps.
    fn kinks(&self) -> Vec<f64> {
        Vec::new()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Constant(pub f64);

impl Profile for Constant {
    fn value(&self, _: f64) -> f64 {
        self.0
    }
    fn derivative(&self, _: f64) -> f64 {
        0.0
    }
}

/// `a + b x`.
#[derive(Debug, Clone, Copy)]
pub struct Affine {
    pub a: f64,
    pub b: f64,
}

impl Profile for Affine {
    fn value(&self, x: f64) -> f64 {
        self.a + self.b * x
    }
    fn derivative(&self, _: f64) -> f64 {
        self.b
    }
}

/// `amplitude · cos(mode · π x)`.
#[derive(Debug, Clone, Copy)]
pub struct Cosine {
    pub mode: f64,
    pub amplitude: f64,
}

impl Profile for Cosine {
    fn value(&self, x: f64) -> f64 {
        self.amplitude * (self.mode * std::f64::consts::PI * x).cos()
    }
    fn derivative(&self, x: f64) -> f64 {
        let k = self.mode * std::f64::consts::PI;
        -self.amplitude * k * (k * x).sin()
    }
}

/// Smooth compactly supported bump `height · exp(1 - 1/(1-r²))`, `r = (x-center)/radius`.
#[derive(Debug, Clone, Copy)]
pub struct Bump {
    pub center: f64,
    pub radius: f64,
    pub height: f64,
}

impl Profile for Bump {
    fn value(&self, x: f64) -> f64 {
        let r = (x - self.center) / self.radius;
        if r.abs() >= 1.0 {
            return 0.0;
        }
        self.height * (1.0 - 1.0 / (1.0 - r * r)).exp()
    }
    fn derivative(&self, x: f64) -> f64 {
        let r = (x - self.center) / self.radius;
        if r.abs() >= 1.0 {
            return 0.0;
        }
        let d = 1.0 - r * r;
        self.value(x) * (-2.0 * r / (d * d)) / self.radius
    }
}

/// `scale · x^s (1-x)^s`, Hölder of order `s` at both ends.
#[derive(Debug, Clone, Copy)]
pub struct Torsion {
    pub scale: f64,
    pub s: f64,
}

impl Profile for Torsion {
    fn value(&self, x: f64) -> f64 {
        if x <= 0.0 || x >= 1.0 {
            return 0.0;
        }
        self.scale * (x * (1.0 - x)).powf(self.s)
    }
    fn derivative(&self, x: f64) -> f64 {
        if x <= 0.0 || x >= 1.0 {
            return 0.0;
        }
        self.scale * self.s * (x * (1.0 - x)).powf(self.s - 1.0) * (1.0 - 2.0 * x)
    }
    fn endpoint_exponent(&self) -> f64 {
        self.s
    }
}

type RealFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Profile given by closures.
#[derive(Clone)]
pub struct FnProfile {
    value: RealFn,
    derivative: RealFn,
    exponent: f64,
}

impl FnProfile {
    pub fn new(
        value: impl Fn(f64) -> f64 + Send + Sync + 'static,
        derivative: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        FnProfile {
            value: Arc::new(value),
            derivative: Arc::new(derivative),
            exponent: 1.0,
        }
    }

    pub fn with_endpoint_exponent(mut self, e: f64) -> Self {
        self.exponent = e;
        self
    }
}

impl Debug for FnProfile {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("FnProfile")
    }
}

impl Profile for FnProfile {
    fn value(&self, x: f64) -> f64 {
        (self.value)(x)
    }
    fn derivative(&self, x: f64) -> f64 {
        (self.derivative)(x)
    }
    fn endpoint_exponent(&self) -> f64 {
        self.exponent
    }
}

/// Continuous piecewise-linear function on a partition of [0,1].
#[derive(Debug, Clone)]
pub struct NodalField {
    nodes: Vec<f64>,
    values: Vec<f64>,
    uniform: bool,
}

impl NodalField {
    pub fn new(nodes: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if nodes.len() < 2 || nodes.len() != values.len() {
            return Err(Error::InvalidParameter("nodal field needs matching node/value arrays of length ≥ 2".into()));
        }
        if nodes[0] != 0.0 || *nodes.last().unwrap() != 1.0 || nodes.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidParameter("nodes must increase from 0 to 1".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("nodal value"));
        }
        let n = nodes.len() - 1;
        let uniform = nodes
            .iter()
            .enumerate()
            .all(|(k, &x)| (x - k as f64 / n as f64).abs() <= 4.0 * f64::EPSILON);
        Ok(NodalField { nodes, values, uniform })
    }

    /// Values at `k/n`, `k = 0..=n`.
    pub fn uniform(values: Vec<f64>) -> Result<Self> {
        let n = values.len().saturating_sub(1);
        if n == 0 {
            return Err(Error::InvalidParameter("nodal field needs at least two values".into()));
        }
        let nodes = uniform_nodes(n);
        NodalField::new(nodes, values)
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn cells(&self) -> usize {
        self.nodes.len() - 1
    }

    /// Index of the cell containing `x ∈ [0,1]` (right-continuous).
    pub fn cell_of(&self, x: f64) -> usize {
        let n = self.cells();
        if self.uniform {
            ((x * n as f64).floor() as isize).clamp(0, n as isize - 1) as usize
        } else {
            (self.nodes.partition_point(|&t| t <= x).max(1) - 1).min(n - 1)
        }
    }

    pub fn slope(&self, k: usize) -> f64 {
        (self.values[k + 1] - self.values[k]) / (self.nodes[k + 1] - self.nodes[k])
    }

    pub fn value(&self, x: f64) -> f64 {
        let x = x.clamp(0.0, 1.0);
        let k = self.cell_of(x);
        let t = (x - self.nodes[k]) / (self.nodes[k + 1] - self.nodes[k]);
        self.values[k] + t * (self.values[k + 1] - self.values[k])
    }
}

pub fn uniform_nodes(n: usize) -> Vec<f64> {
    (0..=n).map(|k| if k == n { 1.0 } else { k as f64 / n as f64 }).collect()
}

/// A function on [0,1] extended by its endpoint values to the whole line.
#[derive(Debug, Clone)]
pub enum ExtendedField {
    Profile(Arc<dyn Profile>),
    Nodal(Arc<NodalField>),
    /// Linear combination, evaluated term by term by the operators.
    Sum(Arc<Vec<(f64, ExtendedField)>>),
    /// `x ↦ u(1-x)`.
    Reflected(Arc<ExtendedField>),
}

#[derive(Debug)]
struct Flattened(ExtendedField);

impl Profile for Flattened {
    fn value(&self, x: f64) -> f64 {
        self.0.value(x)
    }
    fn derivative(&self, x: f64) -> f64 {
        self.0.derivative(x)
    }
    fn endpoint_exponent(&self) -> f64 {
        self.0.endpoint_exponent()
    }
    fn kinks(&self) -> Vec<f64> {
        self.0.kinks()
    }
}

impl ExtendedField {
    pub fn profile(p: impl Profile + 'static) -> Self {
        ExtendedField::Profile(Arc::new(p))
    }

    pub fn constant(c: f64) -> Self {
        Self::profile(Constant(c))
    }

    pub fn nodal(n: NodalField) -> Self {
        ExtendedField::Nodal(Arc::new(n))
    }

    pub fn sum(terms: Vec<(f64, ExtendedField)>) -> Self {
        ExtendedField::Sum(Arc::new(terms))
    }

    pub fn reflect(&self) -> Self {
        ExtendedField::Reflected(Arc::new(self.clone()))
    }

    /// Same function, but opaque: operators integrate it as one field
    /// instead of distributing over a sum.
    pub fn flatten(&self) -> Self {
        Self::profile(Flattened(self.clone()))
    }

    /// `ũ(x)`: the constant extension.
    pub fn value(&self, x: f64) -> f64 {
        let x = x.clamp(0.0, 1.0);
        match self {
            ExtendedField::Profile(p) => p.value(x),
            ExtendedField::Nodal(n) => n.value(x),
            ExtendedField::Sum(t) => t.iter().map(|(c, f)| c * f.value(x)).sum(),
            ExtendedField::Reflected(f) => f.value(1.0 - x),
        }
    }

    /// `ũ'(x)`, zero outside [0,1]; right derivative at kinks.
    pub fn derivative(&self, x: f64) -> f64 {
        if !(0.0..=1.0).contains(&x) {
            return 0.0;
        }
        match self {
            ExtendedField::Profile(p) => p.derivative(x),
            ExtendedField::Nodal(n) => n.slope(n.cell_of(x)),
            ExtendedField::Sum(t) => t.iter().map(|(c, f)| c * f.derivative(x)).sum(),
            ExtendedField::Reflected(f) => -f.derivative(1.0 - x),
        }
    }

    pub fn left_value(&self) -> f64 {
        self.value(0.0)
    }

    pub fn right_value(&self) -> f64 {
        self.value(1.0)
    }

    pub fn endpoint_exponent(&self) -> f64 {
        match self {
            ExtendedField::Profile(p) => p.endpoint_exponent(),
            ExtendedField::Nodal(_) => 1.0,
            ExtendedField::Sum(t) => t
                .iter()
                .filter(|(c, _)| *c != 0.0)
                .map(|(_, f)| f.endpoint_exponent())
                .fold(1.0, f64::min),
            ExtendedField::Reflected(f) => f.endpoint_exponent(),
        }
    }

    /// Interior points where the derivative may jump.
    pub fn kinks(&self) -> Vec<f64> {
        let mut k = match self {
            ExtendedField::Profile(p) => p.kinks(),
            ExtendedField::Nodal(n) => n.nodes[1..n.nodes.len() - 1].to_vec(),
            ExtendedField::Sum(t) => t.iter().flat_map(|(_, f)| f.kinks()).collect(),
            ExtendedField::Reflected(f) => f.kinks().into_iter().map(|x| 1.0 - x).collect(),
        };
        k.sort_by(f64::total_cmp);
        k.dedup();
        k
    }

    /// `sup |u|` and `sup |u'|` sampled on `m+1` equispaced points.
    pub fn sampled_scale(&self, m: usize) -> f64 {
        (0..=m)
            .map(|k| {
                let x = k as f64 / m as f64;
                self.value(x).abs().max(self.derivative(x.min(1.0 - 1e-12).max(1e-12)).abs())
            })
            .fold(0.0, f64::max)
    }
}

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::equilibria::ModelParams;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub s: f64,
    pub nu0: f64,
    pub seed: u64,
    /// Output directory; excluded from the config hash.
    pub out: PathBuf,
    /// Experiment run by `converge`.
    pub experiment: String,
    pub sweep: Sweep,
    pub budget: Budget,
    pub kinetic: KineticConfig,
    pub tolerance: Tolerances,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Sweep {
    pub eps: Vec<f64>,
    pub n: Vec<usize>,
    pub lambda: Vec<f64>,
    /// Values of `s` for the regularity study.
    pub s_values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Budget {
    pub particles: usize,
    pub nodes: usize,
    pub dt: f64,
    /// Time horizon of the duality probe.
    pub horizon: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitialKind {
    Uniform,
    Cosine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KineticConfig {
    pub eps: f64,
    pub snapshots: Vec<f64>,
    pub cells: usize,
    pub initial: InitialKind,
    /// Amplitude `a` of `1 + a cos(πx)`.
    pub amplitude: f64,
    /// Knudsen numbers of the kinetic-against-diffusion comparison.
    pub comparison_eps: Vec<f64>,
    pub reference_cells: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    /// Allowed shortfall of a fitted rate below its proven value.
    pub rate_slack: f64,
    /// Bound on the normalized duality residual.
    pub duality: f64,
    /// Allowed deviation of a boundary exponent from `s`.
    pub exponent: f64,
    /// Smallest weak-metric gap the particle budget must resolve.
    pub signal_floor: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            s: 0.75,
            nu0: 1.0,
            seed: 0,
            out: PathBuf::from("out"),
            experiment: "operators".into(),
            sweep: Sweep::default(),
            budget: Budget::default(),
            kinetic: KineticConfig::default(),
            tolerance: Tolerances::default(),
        }
    }
}

impl Default for Sweep {
    fn default() -> Self {
        Sweep {
            eps: (2..=7).map(|k| 2f64.powi(-k)).collect(),
            n: vec![256, 512, 1024],
            lambda: vec![0.5, 1.0, 2.0],
            s_values: vec![0.6, 0.75, 0.9],
        }
    }
}

impl Default for Budget {
    fn default() -> Self {
        Budget {
            particles: 1_000_000,
            nodes: 1024,
            dt: 1e-3,
            horizon: 12.0,
        }
    }
}

impl Default for KineticConfig {
    fn default() -> Self {
        KineticConfig {
            eps: 0.25,
            snapshots: vec![0.1, 0.3, 0.5],
            cells: 32,
            initial: InitialKind::Cosine,
            amplitude: 0.5,
            comparison_eps: vec![0.5, 0.25, 0.125],
            reference_cells: 512,
        }
    }
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            rate_slack: 0.15,
            duality: 1e-6,
            exponent: 0.05,
            signal_floor: 0.01,
        }
    }
}

fn invalid(msg: String) -> Error {
    Error::Config(msg)
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        ModelParams::new(self.s, self.nu0).map_err(|e| invalid(e.to_string()))?;
        if self.experiment.is_empty() {
            return Err(invalid("experiment name is empty".into()));
        }
        for &e in self.sweep.eps.iter().chain([self.kinetic.eps].iter()).chain(&self.kinetic.comparison_eps) {
            if !(e > 0.0 && e <= 1.0) {
                return Err(invalid(format!("eps must lie in (0,1], got {e}")));
            }
        }
        if let Some(&n) = self.sweep.n.iter().find(|&&n| n < 8) {
            return Err(invalid(format!("grid sizes must be at least 8, got {n}")));
        }
        if let Some(&l) = self.sweep.lambda.iter().find(|&&l| !(l > 0.0 && l.is_finite())) {
            return Err(invalid(format!("lambda must be positive, got {l}")));
        }
        for &s in &self.sweep.s_values {
            ModelParams::new(s, 1.0).map_err(|e| invalid(e.to_string()))?;
        }
        let b = &self.budget;
        if b.particles == 0 {
            return Err(invalid("particle budget must be at least 1".into()));
        }
        if b.nodes < 8 {
            return Err(invalid(format!("nodes must be at least 8, got {}", b.nodes)));
        }
        if !(b.dt > 0.0 && b.dt.is_finite()) {
            return Err(invalid(format!("dt must be positive, got {}", b.dt)));
        }
        if !(b.horizon > 0.0 && b.horizon.is_finite()) {
            return Err(invalid(format!("horizon must be positive, got {}", b.horizon)));
        }
        let k = &self.kinetic;
        if k.cells == 0 {
            return Err(invalid("kinetic histogram needs at least one cell".into()));
        }
        if k.snapshots.is_empty() || k.snapshots.iter().any(|&t| !(t >= 0.0 && t.is_finite())) {
            return Err(invalid("snapshot times must be nonnegative and nonempty".into()));
        }
        if k.snapshots.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("snapshot times must increase".into()));
        }
        if !(k.amplitude.abs() <= 1.0) {
            return Err(invalid(format!("cosine amplitude must lie in [-1,1], got {}", k.amplitude)));
        }
        if k.reference_cells < 8 {
            return Err(invalid(format!("reference grid must have at least 8 cells, got {}", k.reference_cells)));
        }
        let t = &self.tolerance;
        for (name, v) in [
            ("rate_slack", t.rate_slack),
            ("duality", t.duality),
            ("exponent", t.exponent),
            ("signal_floor", t.signal_floor),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(format!("tolerance {name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| invalid(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| invalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// First 16 hex digits of the SHA-256 of the canonical TOML form, with
    /// the output directory blanked.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.out = PathBuf::new();
        let text = canonical.to_toml().unwrap_or_default();
        let digest = Sha256::digest(text.as_bytes());
        hex::encode(digest)[..16].to_string()
    }
}

/// Reads and validates a config file; `None` gives the defaults.
pub fn parse_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        None => {
            let cfg = RunConfig::default();
            cfg.validate()?;
            Ok(cfg)
        }
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| invalid(format!("cannot read {}: {e}", p.display())))?;
            RunConfig::from_toml(&text)
        }
    }
}

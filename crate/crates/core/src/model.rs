//! A parameter set together with its constants and kernel tables, built once
//! and shared by every experiment.

use std::sync::Arc;

use crate::equilibria::{build_constants, ConstantSet, KernelSettings, Kernels, ModelParams};
use crate::error::Result;
use crate::nonlocal_ops::QuadratureSpec;

#[derive(Debug, Clone)]
pub struct Model {
    pub params: ModelParams,
    pub constants: ConstantSet,
    pub kernels: Arc<Kernels>,
    pub quadrature: QuadratureSpec,
}

impl Model {
    pub fn new(params: ModelParams) -> Result<Self> {
        Self::with_settings(params, KernelSettings::default(), QuadratureSpec::default())
    }

    pub fn with_settings(params: ModelParams, kernel: KernelSettings, quadrature: QuadratureSpec) -> Result<Self> {
        let constants = build_constants(&params)?;
        let kernels = Arc::new(Kernels::build(&params, kernel)?);
        Ok(Model {
            params,
            constants,
            kernels,
            quadrature,
        })
    }

    pub fn s(&self) -> f64 {
        self.params.s
    }
}

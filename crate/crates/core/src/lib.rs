//! Numerical laboratory for a one-dimensional kinetic equation with a
//! heavy-tailed equilibrium and diffuse wall reflection, and for its
//! fractional Neumann diffusion limit.

pub mod cli_io;
pub mod equilibria;
pub mod error;
pub mod field;
pub mod fit;
pub mod frac_solver;
pub mod harness;
pub mod kinetic_mc;
pub mod model;
pub mod nonlocal_ops;
pub mod quad;
pub mod testfn;

pub use error::{Error, Result};

use thiserror::Error;

/// Errors raised by the numerical laboratory.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("non-finite argument: {0}")]
    NonFinite(&'static str),

    #[error("point {x} lies outside the open interval (0,1)")]
    OutsideInterval { x: f64 },

    #[error("quadrature did not reach tolerance: {0}")]
    Quadrature(String),

    #[error("degenerate 2x2 correction system: determinant {det:e} relative to scale {scale:e}")]
    DegenerateSystem { det: f64, scale: f64 },

    #[error("correction residual {residual:e} exceeds {tolerance:e}")]
    ResidualTooLarge { residual: f64, tolerance: f64 },

    #[error("assembly accuracy check failed: {0}")]
    Assembly(String),

    #[error("initial density is not normalizable: {0}")]
    NonNormalizable(String),

    #[error("time support mismatch: {0}")]
    TimeSupport(String),

    #[error("particle budget insufficient: {requested} requested, at least {required} needed")]
    BudgetInsufficient { requested: usize, required: usize },

    #[error("{0}")]
    Config(String),

    #[error("schema mismatch: {0}")]
    Schema(String),

    #[error("tolerance failure: {0}")]
    Tolerance(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True for errors caused by bad user input rather than numerics.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::InvalidParameter(_) | Error::Schema(_)
        )
    }
}

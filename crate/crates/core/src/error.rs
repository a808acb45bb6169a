use thiserror::Error;

/// Errors raised by the simulation library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate mass: integral {integral:e} is not positive")]
    DegenerateMass { integral: f64 },

    #[error("numerical breakdown in {context}: {detail}")]
    NumericalBreakdown { context: String, detail: String },

    #[error("quantity is not finite: {0}")]
    NotFinite(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("eigensolver failure: {0}")]
    EigenSolver(String),

    #[error("Perron violation: eigenvector entry {min_entry:e} below tolerance")]
    PerronViolation { min_entry: f64 },

    #[error("frequency cutoff too small: estimated tail {tail:e}")]
    CutoffTooSmall { tail: f64 },

    #[error("grid too coarse: dx = {dx:e} exceeds sqrt(kappa*tau)/8 = {limit:e} at tau = {tau}; use n >= {required_n}")]
    GridRule {
        tau: f64,
        dx: f64,
        limit: f64,
        required_n: usize,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn breakdown(context: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::NumericalBreakdown {
            context: context.into(),
            detail: detail.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

use thiserror::Error;

/// Errors raised by the numerical routines of this crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("empty region: {0}")]
    EmptyRegion(String),
    #[error("under-resolved: {0}")]
    UnderResolved(String),
    #[error("projection failed: {0}")]
    Projection(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("numeric failure at sweep {sweep}: {what}")]
    NumericFailure { sweep: usize, what: String },
    #[error("support: {0}")]
    Support(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("depth cap {0} reached")]
    DepthCap(usize),
    #[error("pole at z = {0}")]
    Pole(String),
    #[error("accuracy not reached: {0}")]
    Accuracy(String),
    #[error("path error: {0}")]
    Path(String),
    #[error("unreliable degree (residual {residual})")]
    UnreliableDegree { residual: f64 },
    #[error("search budget exhausted after {0} nodes")]
    Budget(usize),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("io: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

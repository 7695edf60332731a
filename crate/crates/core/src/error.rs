use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("field has components outside the subspace (residual {residual:.3e})")]
    OutsideSubspace { residual: f64 },
    #[error("quadrature did not converge: {0}")]
    Quadrature(String),
    #[error("numerically singular matrix: {0}")]
    Singular(String),
    #[error("condition estimate {cond:.3e} exceeds the limit {limit:.1e}")]
    IllConditioned { cond: f64, limit: f64 },
    #[error("solver failure at t = {time:.6}: {reason}")]
    Solver { time: f64, reason: String },
    #[error("model rejected: {0}")]
    ModelRejected(String),
    #[error("both densities vanish at datum {index}")]
    DegenerateDatum { index: usize },
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Failures of the numerics, as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Quadrature(_)
                | Error::Singular(_)
                | Error::IllConditioned { .. }
                | Error::Solver { .. }
                | Error::ModelRejected(_)
                | Error::DegenerateDatum { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}

use thiserror::Error;

/// Errors raised by mesh construction, assembly, the saddle point solvers and
/// the experiment harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The coefficient grid does not resolve to whole fine elements.
    #[error("coefficient grid with {m} cells per side is not aligned with a fine mesh of {n_fine} cells per side")]
    Alignment { m: usize, n_fine: usize },

    #[error("matrix is not positive definite (breakdown at pivot {pivot})")]
    NotPositiveDefinite { pivot: usize },

    /// The constraint block has numerically dependent rows. Usually the fine
    /// mesh is too coarse relative to the coarse mesh and polynomial degree.
    #[error("constraint block is rank deficient: {deficient} of {rows} rows are dependent")]
    ConstraintRank { deficient: usize, rows: usize },

    #[error("singular coarse system (condition estimate {condition:.3e})")]
    SingularCoarse { condition: f64 },

    #[error("numerical breakdown: {0}")]
    Breakdown(String),

    #[error("instance too large: {0}")]
    TooLarge(String),

    #[error("malformed input: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

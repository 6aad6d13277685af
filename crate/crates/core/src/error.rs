use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimensions: {0}")]
    Dimension(String),

    #[error("invalid world: {0}")]
    InvalidWorld(String),

    #[error("line {line}: field `{field}`: {message}")]
    Parse {
        line: usize,
        field: String,
        message: String,
    },

    #[error("pose ({x:.3}, {y:.3}) lies inside an obstacle cell")]
    PoseInObstacle { x: f64, y: f64 },

    #[error("filter divergence: observation has zero likelihood under the current belief support")]
    FilterDivergence,

    #[error("invalid covariance: {0}")]
    InvalidCovariance(String),

    #[error("mixture fitting failed: {0}")]
    Fitting(String),

    #[error("invariant violated: {0}")]
    InvariantViolation(String),

    #[error("unreachable: {0}")]
    Unreachable(String),

    #[error("out of bounds: {0}")]
    OutOfBounds(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

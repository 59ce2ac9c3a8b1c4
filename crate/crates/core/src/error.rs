use thiserror::Error;

pub type Result<T> = std::result::Result<T, BeamError>;

#[derive(Debug, Error)]
pub enum BeamError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("user {user} has nonpositive distance {distance} m")]
    NonPositiveDistance { user: usize, distance: f64 },

    #[error("gain entry ({row}, {col}) has zero variance over the ensemble")]
    ZeroVariance { row: usize, col: usize },

    #[error("invalid probability {0} (must lie in [0, 1])")]
    InvalidProbability(f64),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("ensemble is empty")]
    EmptyEnsemble,

    #[error("rank deficient: need {needed} nonzero singular values, found {found}")]
    RankDeficient { needed: usize, found: usize },

    #[error("no feasible uncertainty radius: nominal channel has no positive top-K spectrum")]
    NoFeasibleAlpha,

    #[error("eigenvalue gap {gap:e} below tolerance {tol:e}")]
    EigenGap { gap: f64, tol: f64 },

    #[error("matrix is singular or ill-conditioned (condition estimate {0:e})")]
    Singular(f64),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("channel is identically zero")]
    ZeroChannel,

    #[error("link results mix directions")]
    DirectionMismatch,

    #[error("sinr must be nonnegative, got {0}")]
    NegativeSinr(f64),

    #[error("throughputs have zero mean (all users in outage)")]
    ZeroMeanThroughput,

    #[error("modcod table line {line}: {msg}")]
    Table { line: usize, msg: String },

    #[error("config: {0}")]
    Config(String),

    #[error("matrix file line {line}: {msg}")]
    MatrixFile { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

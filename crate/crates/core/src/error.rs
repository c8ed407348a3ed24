use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("numeric failure: {0}")]
    NumericFailure(String),

    #[error("rank deficiency: requested rank {requested}, achievable rank {achievable}")]
    RankDeficient { requested: usize, achievable: usize },

    #[error("degenerate subspace for episode `{0}`: mode matrix has zero rank")]
    DegenerateSubspace(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("f_KFD is zero and epsilon is zero; use epsilon > 0")]
    DivisionGuard,

    #[error("undefined normalization: {0}")]
    UndefinedNormalization(String),

    #[error("malformed input: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Short machine-readable category, used by the CLI for exit reporting.
    pub fn category(&self) -> &'static str {
        match self {
            Error::NumericFailure(_) => "numeric",
            Error::RankDeficient { .. } => "rank",
            Error::DegenerateSubspace(_) => "degenerate",
            Error::DimensionMismatch(_) => "dimension",
            Error::Config(_) => "config",
            Error::DivisionGuard => "division-guard",
            Error::UndefinedNormalization(_) => "normalization",
            Error::Parse(_) => "parse",
            Error::Io(_) => "io",
        }
    }

    /// Process exit status for this category. Usage errors exit with 2.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NumericFailure(_) => 10,
            Error::RankDeficient { .. } => 11,
            Error::DegenerateSubspace(_) => 12,
            Error::DimensionMismatch(_) => 13,
            Error::Config(_) => 14,
            Error::DivisionGuard => 15,
            Error::UndefinedNormalization(_) => 16,
            Error::Parse(_) => 17,
            Error::Io(_) => 18,
        }
    }
}

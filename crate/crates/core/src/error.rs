use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid mass function: {0}")]
    InvalidMass(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("censoring model leaves no uncensored subjects (p = 0)")]
    NoUncensored,

    #[error("censoring model leaves no censored subjects (p = 1)")]
    NoCensored,

    #[error("rejection sampler exceeded {0} proposals")]
    RejectionCap(usize),

    #[error("scheme (ii) resampling exceeded {0} attempts")]
    ResampleCap(usize),

    #[error("incident-population acceptance rate {0:.3e} below 1e-4")]
    LowAcceptance(f64),

    #[error("censored value {0} has zero residual mass; likelihood is degenerate")]
    ZeroResidual(f64),

    #[error("brute-force search supports at most 4 distinct values, got {0}")]
    TooManyPoints(usize),

    #[error("t = {t} is outside the invertibility set J (alpha = {alpha}, beta = {beta})")]
    NotInJ { t: f64, alpha: f64, beta: f64 },

    #[error(
        "scheme (iii) limit requires p > 0.59 for the operator pI + (1 - p)A_f to be invertible, got p = {0}"
    )]
    SchemeIiiCondition(f64),

    #[error("singular operator (condition estimate {condition:.3e}); {hint}")]
    SingularOperator { condition: f64, hint: String },

    #[error("study aborted; failing seeds: {0:?}")]
    StudyFailures(Vec<u64>),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

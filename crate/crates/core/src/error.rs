use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("coincident nodes: distance must be positive")]
    CoincidentNodes,

    #[error("antenna array must have at least one element")]
    EmptyArray,

    #[error("quantizer floor violated: minimum eigenvalue {min_eig:e} below {floor:e}")]
    QuantizerFloor { min_eig: f64, floor: f64 },

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("starved phase: {0} has a positive fraction but zero rate")]
    StarvedPhase(String),

    #[error("degenerate phase: {0} has a positive fraction but zero duration")]
    DegeneratePhase(String),

    #[error("invalid SIC order: {0}")]
    InvalidPermutation(String),

    #[error("invalid task split: {0}")]
    InvalidSplit(String),

    #[error("invalid scheme: {0}")]
    InvalidMode(String),

    #[error("malformed conic program: {0}")]
    MalformedProgram(String),

    #[error("solver failure: {0}")]
    Solver(String),

    #[error("all {0} starts failed")]
    AllStartsFailed(usize),

    #[error("config error in field `{field}`: {message}")]
    Config { field: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}

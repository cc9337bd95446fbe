use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("column {column} has norm {norm:e}, too small to project onto the manifold")]
    DegenerateColumn { column: usize, norm: f64 },

    #[error("column {column} has norm {norm}, expected unit norm")]
    NotOnManifold { column: usize, norm: f64 },

    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },

    #[error("column {column} is not tangent at the base point (|<k, h>| = {residual:e})")]
    NotTangent { column: usize, residual: f64 },

    #[error("column {column} is antipodal to the base point; log map direction undefined")]
    AntipodalColumn { column: usize },

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("pyramid depth {p} exceeds min(h, w) = {limit}")]
    PyramidTooDeep { p: usize, limit: usize },

    #[error("anchor index {t} out of range 0..={tau}")]
    OutOfRange { t: usize, tau: usize },

    #[error("weight factors sum to {0:e}; total loss is undefined")]
    ZeroWeightSum(f64),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid episode: {0}")]
    InvalidEpisode(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("fit aborted at iteration {iteration}: {source}")]
    FitAborted {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("evaluation aborted: {failures} of {episodes} episodes failed")]
    EvaluationAborted { failures: usize, episodes: usize },

    #[error("feature store: {0}")]
    Store(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

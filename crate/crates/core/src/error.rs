use thiserror::Error;

/// Errors raised across the analysis pipeline.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("empty matrix")]
    EmptyMatrix,

    #[error("matrix has {entries} entries, expected {rows}x{cols}")]
    Shape {
        rows: usize,
        cols: usize,
        entries: usize,
    },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid tolerances: {0}")]
    Tolerances(String),

    #[error("point {point:?} lies outside the model domain")]
    Domain { point: [f64; 3] },

    #[error("singular matrix (|det| = {det:e})")]
    Singular { det: f64 },

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("parse error at {line}:{col}: {msg}")]
    Parse {
        line: usize,
        col: usize,
        msg: String,
    },

    #[error("unknown model `{0}`")]
    UnknownModel(String),

    #[error("invalid model parameters: {0}")]
    ModelParams(String),

    #[error("sampler configuration: {0}")]
    Sampler(String),

    #[error("null-space dimension did not stabilise before k_max (history {history:?})")]
    Instability { history: Vec<usize> },

    #[error("finite-difference step left the domain at {point:?}")]
    StepOutsideDomain { point: [f64; 3] },

    #[error("chart error: {0}")]
    Chart(String),

    #[error("leaf trace error: {0}")]
    Trace(String),

    #[error("grid error: {0}")]
    Grid(String),
}

pub type Result<T> = std::result::Result<T, Error>;

use thiserror::Error;

use crate::neural::TrainRecord;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("grids are not nested: spacing ratio {ratio} is not an integer")]
    NonNestedGrids { ratio: f64 },

    #[error("reference field has zero norm")]
    DegenerateReference,

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("kernel matrix is not positive definite even with jitter {jitter:e}")]
    NotPositiveDefinite { jitter: f64 },

    #[error("solver blew up at time step {step}")]
    BlowUp { step: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("training diverged after {} iterations", .0.iterations)]
    TrainingDiverged(Box<TrainRecord>),

    #[error("grid too small for stencil `{0}`")]
    GridTooSmall(String),

    #[error("anchor {0:?} is not admissible for the stencil")]
    InadmissibleAnchor((usize, usize)),

    #[error("unsupported equation/stencil pair: {0}")]
    Unsupported(String),

    #[error("empty collocation set: {0}")]
    DegenerateCollocation(&'static str),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Stable machine-readable identifier, used in the CLI's error JSON.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::NonNestedGrids { .. } => "non_nested_grids",
            Error::DegenerateReference => "degenerate_reference",
            Error::GridMismatch(_) => "grid_mismatch",
            Error::InvalidGrid(_) => "invalid_grid",
            Error::NotPositiveDefinite { .. } => "not_positive_definite",
            Error::BlowUp { .. } => "blow_up",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::TrainingDiverged(_) => "training_diverged",
            Error::GridTooSmall(_) => "grid_too_small",
            Error::InadmissibleAnchor(_) => "inadmissible_anchor",
            Error::Unsupported(_) => "unsupported",
            Error::DegenerateCollocation(_) => "degenerate_collocation",
            Error::Empty(_) => "empty",
            Error::Config(_) => "config",
            Error::Parse(_) => "parse",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}

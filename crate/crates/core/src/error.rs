use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("empty distribution: no detections to compute the expectation height from")]
    EmptyDistribution,

    #[error("degenerate regression: need at least two distinct center rows, found {distinct}")]
    DegenerateRegression { distinct: usize },

    #[error("shape mismatch in {context}: expected {expected}, found {found}")]
    Shape {
        context: String,
        expected: String,
        found: String,
    },

    #[error("empty distant region: no cells to evaluate")]
    EmptyRegion,

    #[error("non-finite value in {layer} at step {step}")]
    NonFinite { layer: String, step: u64 },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("image: {0}")]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(
        context: impl Into<String>,
        expected: impl std::fmt::Display,
        found: impl std::fmt::Display,
    ) -> Self {
        Error::Shape {
            context: context.into(),
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }

    /// True for errors caused by the input data rather than by arguments or configuration.
    pub fn is_data_error(&self) -> bool {
        !matches!(self, Error::Argument(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

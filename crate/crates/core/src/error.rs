use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("batch length {0} is not a positive multiple of 3073 bytes")]
    Length(usize),
    #[error("record {record} has label byte {label}, expected 0..=9")]
    Label { record: usize, label: u8 },
    #[error("expected {expected} records, got {actual}")]
    Count { expected: usize, actual: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("LCA diverged at iteration {iteration}: energy {energy:e} exceeds 1e6 x initial {initial:e}")]
    Divergence {
        iteration: usize,
        energy: f64,
        initial: f64,
    },
    #[error("training set is empty")]
    EmptyDataset,
    #[error("clean image has zero energy over the coverage mask")]
    ZeroSignal,
    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("only {usable} non-boundary minima available, need at least 3")]
    Boundary { usable: usize },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("config: {0}")]
    Config(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Short error class name, e.g. `BoundaryError`.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Length(_) => "LengthError",
            Error::Label { .. } => "LabelError",
            Error::Count { .. } => "CountError",
            Error::Shape(_) => "ShapeError",
            Error::InvalidParam(_) => "InvalidParamError",
            Error::Divergence { .. } => "DivergenceError",
            Error::EmptyDataset => "EmptyDatasetError",
            Error::ZeroSignal => "ZeroSignalError",
            Error::TooFewPoints { .. } => "TooFewPointsError",
            Error::Domain(_) => "DomainError",
            Error::Boundary { .. } => "BoundaryError",
            Error::Io { .. } => "IoError",
            Error::Format { .. } => "FormatError",
            Error::Config(_) => "ConfigError",
        }
    }

    /// True for failures of the numerics rather than of inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Divergence { .. }
                | Error::ZeroSignal
                | Error::TooFewPoints { .. }
                | Error::Domain(_)
                | Error::Boundary { .. }
        )
    }
}

//! Error type shared across the crate.

use thiserror::Error;

/// Errors produced by mesh handling, assembly, solving and sampling.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("format error in {path}: {msg}")]
    Format { path: String, msg: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("non-physical deformation: det(F) = {det} <= 0")]
    NonPhysicalDeformation { det: f64 },

    #[error("element {element} inverted: det(F) = {det} <= 0")]
    ElementInversion { element: usize, det: f64 },

    #[error("no sign change of P33 in bracket [{lo}, {hi}]")]
    RootBracket { lo: f64, hi: f64 },

    #[error("interpolation failed: node {node} at ({x}, {y}) outside source mesh")]
    Interpolation { node: usize, x: f64, y: f64 },

    #[error("configuration error: {0}")]
    Configuration(String),

    #[error("singular system: numerical rank {rank} < {cols} columns")]
    SingularSystem { rank: usize, cols: usize },

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("segmentation failed: {0}")]
    SegmentationFailure(String),

    #[error("undefined ratio: {0}")]
    UndefinedRatio(String),

    #[error("forward solve did not converge: {0}")]
    Nonconvergence(String),

    #[error("unsupported problem size: {0}")]
    UnsupportedSize(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

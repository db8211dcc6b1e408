use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{key}`: {reason}")]
    Validation { key: &'static str, reason: String },

    #[error("config parse error at `{key}`: {message}")]
    ConfigParse { key: String, message: String },

    #[error("cannot read `{path}`: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("size mismatch: expected {expected}, got {actual}")]
    SizeMismatch { expected: usize, actual: usize },

    #[error("empty ensemble")]
    EmptyEnsemble,

    #[error("histogram edges must be strictly increasing with at least two entries")]
    BadBins,

    #[error("propagator did not converge under step halving: residual {residual:.3e} > {tolerance:.3e}")]
    NotConverged { residual: f64, tolerance: f64 },

    #[error("eigensolver failed on {dim}x{dim} matrix: {message}")]
    Eigen { dim: usize, message: String },

    #[error("no isolated slow mode: best gap ratio {best_ratio:.3} below threshold {threshold:.3}")]
    NoSlowMode { best_ratio: f64, threshold: f64 },

    #[error("quadrature did not converge: residual {residual:.3e}")]
    Quadrature { residual: f64 },

    #[error("degenerate fit input: {0}")]
    DegenerateFit(String),

    #[error("metastable combination puts only {achieved:.3} of the mass on the target half-lattice (need {required:.3})")]
    Concentration { achieved: f64, required: f64 },

    #[error("{0}")]
    Precondition(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

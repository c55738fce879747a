//! Error type shared by every module of the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: expected a square matrix, got {rows}x{cols}")]
    NonSquare {
        op: &'static str,
        rows: usize,
        cols: usize,
    },

    #[error("{op}: input contains non-finite entries")]
    NonFinite { op: &'static str },

    #[error("{op}: dimension mismatch ({detail})")]
    DimensionMismatch { op: &'static str, detail: String },

    #[error("{op}: matrix is not symmetric (relative asymmetry {asymmetry:.3e})")]
    NotSymmetric { op: &'static str, asymmetry: f64 },

    #[error("{op}: matrix is not stable (spectral abscissa {abscissa:.6e})")]
    Unstable { op: &'static str, abscissa: f64 },

    #[error("{op}: matrix is not symmetric positive definite")]
    NotPositiveDefinite { op: &'static str },

    #[error(
        "{op}: matrix is indefinite (most negative eigenvalue {min_eig:.3e} \
         exceeds the round-off allowance {allowance:.3e})"
    )]
    Indefinite {
        op: &'static str,
        min_eig: f64,
        allowance: f64,
    },

    #[error("{op}: factor is rank deficient (rank {rank} of {dim})")]
    RankDeficient {
        op: &'static str,
        rank: usize,
        dim: usize,
    },

    #[error("requested order {requested} exceeds the usable rank {usable}")]
    OverTruncation { requested: usize, usable: usize },

    #[error(
        "prior covariance is not compatible with the dynamics \
         (residual abscissa {residual_abscissa:.6e})"
    )]
    IncompatiblePrior { residual_abscissa: f64 },

    #[error(
        "spin-up prior is singular (factor rank {rank} of {dim}); \
         supply a regularization ridge to proceed"
    )]
    SingularPrior { rank: usize, dim: usize },

    #[error("observation schedule is empty")]
    EmptySchedule,

    #[error("measurement set is empty")]
    EmptyMeasurements,

    #[error("invalid observation schedule: {detail}")]
    InvalidSchedule { detail: String },

    #[error("{op}: invalid argument ({detail})")]
    InvalidArgument { op: &'static str, detail: String },

    #[error("Schur decomposition did not converge")]
    SchurFailed,

    #[error("{path}:{line}: {detail}")]
    Parse {
        path: String,
        line: usize,
        detail: String,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

//! CLI error type: every failure carries a stable machine-parsable category
//! for the one-line error output.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),

    #[error("stage '{stage}': {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: btinfer::Error,
    },

    #[error(transparent)]
    Core(#[from] btinfer::Error),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable kebab-case category for machine parsing.
    pub fn category(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Io { .. } => "io",
            CliError::Stage { source, .. } => core_category(source),
            CliError::Core(source) => core_category(source),
        }
    }
}

fn core_category(e: &btinfer::Error) -> &'static str {
    use btinfer::Error as E;
    match e {
        E::NonSquare { .. } | E::NonFinite { .. } => "invalid-matrix",
        E::DimensionMismatch { .. } => "dimension-mismatch",
        E::NotSymmetric { .. } => "not-symmetric",
        E::Unstable { .. } => "unstable-system",
        E::NotPositiveDefinite { .. } => "not-positive-definite",
        E::Indefinite { .. } => "indefinite-matrix",
        E::RankDeficient { .. } => "rank-deficient",
        E::OverTruncation { .. } => "over-truncation",
        E::IncompatiblePrior { .. } => "incompatible-prior",
        E::SingularPrior { .. } => "singular-prior",
        E::EmptySchedule => "empty-schedule",
        E::EmptyMeasurements => "empty-measurements",
        E::InvalidSchedule { .. } => "invalid-schedule",
        E::InvalidArgument { .. } => "invalid-argument",
        E::SchurFailed => "numerical-failure",
        E::Parse { .. } => "parse-failure",
        E::Io { .. } => "io",
    }
}

pub fn stage(stage: &'static str) -> impl Fn(btinfer::Error) -> CliError {
    move |source| CliError::Stage { stage, source }
}

use thiserror::Error;

pub type Result<T> = std::result::Result<T, MarrrError>;

#[derive(Debug, Error)]
pub enum MarrrError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error("index out of bounds: {0}")]
    Index(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("degenerate covariate: {0}")]
    DegenerateCovariate(String),

    /// More covariates than samples in a module; the regression term would be
    /// indistinguishable from an unsupervised one.
    #[error("degenerate regression design: {0}")]
    Degeneracy(String),

    #[error("rank-deficient covariates: {0}")]
    RankDeficiency(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("degenerate metric: {0}")]
    DegenerateMetric(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl MarrrError {
    /// Process exit code for the CLI: 1 for numerical failures, 2 for
    /// configuration, schema and usage problems.
    pub fn exit_code(&self) -> i32 {
        match self {
            MarrrError::Numerical(_)
            | MarrrError::DegenerateInput(_)
            | MarrrError::DegenerateCovariate(_)
            | MarrrError::RankDeficiency(_)
            | MarrrError::DegenerateMetric(_)
            | MarrrError::InsufficientData(_) => 1,
            _ => 2,
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        MarrrError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the crate.
///
/// Cluster and member indices carried by the data variants are 1-based so
/// they can be reported to users verbatim.
#[derive(Debug, Error)]
pub enum AftError {
    #[error("dataset needs at least 2 clusters, found {0}")]
    TooFewClusters(usize),
    #[error("cluster {cluster} is empty")]
    EmptyCluster { cluster: usize },
    #[error("dimension mismatch at (i={cluster}, k={member}): expected {expected} covariates, found {found}")]
    DimensionMismatch {
        cluster: usize,
        member: usize,
        expected: usize,
        found: usize,
    },
    #[error("non-finite {field} at (i={cluster}, k={member})")]
    NonFinite {
        cluster: usize,
        member: usize,
        field: &'static str,
    },
    #[error("invalid event indicator {value} at (i={cluster}, k={member}); expected 0 or 1")]
    InvalidEvent {
        cluster: usize,
        member: usize,
        value: u8,
    },
    #[error("zero events: every observation is censored")]
    ZeroEvents,
    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("missing column '{0}'")]
    MissingColumn(String),
    #[error("nonpositive time {value} on line {line}")]
    NonpositiveTime { line: usize, value: f64 },
    #[error("unparseable cell '{cell}' in column '{column}' on line {line}")]
    Unparseable {
        line: usize,
        column: String,
        cell: String,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config error: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("covariate column {column} has zero MAD (constant or near-constant)")]
    DegenerateColumn { column: usize },
    #[error("need more observations than covariates (M={m}, p={p})")]
    TooFewObservations { m: usize, p: usize },
    #[error("singular jacobian: {0}")]
    SingularJacobian(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl AftError {
    /// CLI exit status: 1 usage, 2 data, 3 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            AftError::InvalidArgument(_) | AftError::Config(_) => 1,
            AftError::SingularJacobian(_)
            | AftError::Numerical(_)
            | AftError::DegenerateColumn { .. } => 3,
            _ => 2,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        AftError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, AftError>;

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("need {required} items with 3 repeats, found {found}")]
    InsufficientRepeats { required: usize, found: usize },

    #[error("no training item has two or more repeats")]
    NoRepeats,

    #[error("no voxel has a noise ceiling above {threshold}%")]
    EmptySelection { threshold: f64 },

    #[error("session {session} has {trials} trial(s); at least 2 are required")]
    SessionTooSmall { session: u32, trials: usize },

    #[error("zero-norm vector at row {row}")]
    ZeroVector { row: usize },

    #[error("loss became non-finite at iteration {iteration}")]
    NonFiniteLoss { iteration: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix is singular or not positive definite (lambda = {lambda})")]
    SingularMatrix { lambda: f64 },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("degenerate (zero-norm) row {row} in {what}")]
    DegenerateRow { what: &'static str, row: usize },

    #[error("clustering needs at least 2 participants, found {found}")]
    TooFewParticipants { found: usize },

    #[error("cluster {cluster_id} has no members")]
    EmptyCluster { cluster_id: usize },

    #[error("centroid of cluster {cluster_id} has (near-)zero norm")]
    DegenerateCentroid { cluster_id: usize },

    #[error("caption corpus is empty")]
    EmptyCorpus,

    #[error("item {item_id} has no prediction for participant {participant_id}")]
    MissingItem { item_id: u64, participant_id: u32 },

    #[error("infeasible synthetic spec: {0}")]
    InfeasibleSpec(String),

    #[error("missing upstream artifact for stage `{stage}`: {}", path.display())]
    MissingUpstream { stage: &'static str, path: PathBuf },

    #[error("outputs of stage `{stage}` were modified ({reason}); rerun that stage")]
    UpstreamModified { stage: &'static str, reason: String },

    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("unknown {kind} `{name}` (available: {available})")]
    UnknownStrategy {
        kind: &'static str,
        name: String,
        available: String,
    },

    #[error("malformed file {}: {reason}", path.display())]
    Format { path: PathBuf, reason: String },

    #[error("io error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}

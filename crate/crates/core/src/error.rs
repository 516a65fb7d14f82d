use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = UmtError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum UmtError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("numeric domain error in {op}: {detail}")]
    NumericDomain { op: &'static str, detail: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("backward already ran on this tape; call reset() first")]
    BackwardTwice,

    #[error("sequence of length {len} exceeds positional table of {max}")]
    SequenceTooLong { len: usize, max: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("sample {id}: missing file {path}")]
    MissingFile { id: String, path: PathBuf },

    #[error("sample {id}: {detail}")]
    Alignment { id: String, detail: String },

    #[error("sample {id}: non-finite value in {what}")]
    NonFinite { id: String, what: String },

    #[error("sample {id}: invalid annotation: {detail}")]
    Annotation { id: String, detail: String },

    #[error("malformed file {path}: {detail}")]
    Format { path: PathBuf, detail: String },

    #[error("modality mismatch: {0}")]
    ModalityMismatch(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("config: {0}")]
    Config(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl UmtError {
    /// Short stable identifier, used for machine-readable error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            UmtError::ShapeMismatch { .. } => "shape_mismatch",
            UmtError::NumericDomain { .. } => "numeric_domain",
            UmtError::InvalidArgument(_) => "invalid_argument",
            UmtError::NonScalarLoss(_) => "non_scalar_loss",
            UmtError::BackwardTwice => "backward_twice",
            UmtError::SequenceTooLong { .. } => "sequence_too_long",
            UmtError::Io { .. } => "io",
            UmtError::MissingFile { .. } => "missing_file",
            UmtError::Alignment { .. } => "alignment",
            UmtError::NonFinite { .. } => "non_finite",
            UmtError::Annotation { .. } => "annotation",
            UmtError::Format { .. } => "format",
            UmtError::ModalityMismatch(_) => "modality_mismatch",
            UmtError::NonFiniteLoss { .. } => "non_finite_loss",
            UmtError::Checkpoint(_) => "checkpoint",
            UmtError::Config(_) => "config",
            UmtError::Json(_) => "json",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        UmtError::Io {
            path: path.into(),
            source,
        }
    }
}

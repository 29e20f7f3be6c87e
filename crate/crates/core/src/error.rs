use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("malformed input: {0}")]
    Format(String),

    #[error("dimension mismatch: expected {expected}, found {found}{}", context_suffix(.context))]
    DimensionMismatch {
        expected: usize,
        found: usize,
        context: Option<String>,
    },

    #[error("duplicate record ({subject_id}, {region})")]
    DuplicateRecord { subject_id: String, region: String },

    #[error("unknown region code `{0}`")]
    UnknownRegion(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("expected 12 slices, found {0}")]
    SliceCount(usize),

    #[error("degenerate target range")]
    DegenerateTargets,

    #[error("non-finite gradient at iteration {iteration}")]
    NonFiniteGradient { iteration: usize },

    #[error("computation canceled")]
    Canceled,

    #[error("insufficient overlap between profiles at every shift")]
    InsufficientOverlap,

    #[error("max-value 0: image cannot be rescaled")]
    ZeroMaxValue,

    #[error("unknown group key `{0}`")]
    UnknownGroup(String),

    #[error("unknown field `{0}`")]
    UnknownField(String),

    #[error("contradictory true sex for subject {0}")]
    ContradictoryLabel(String),
}

fn context_suffix(context: &Option<String>) -> String {
    context.as_ref().map(|c| format!(" ({c})")).unwrap_or_default()
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    /// True for failures of the environment (files, sockets) rather than of the input data.
    pub fn is_io(&self) -> bool {
        match self {
            Error::Io(_) => true,
            Error::Csv(e) => matches!(e.kind(), csv::ErrorKind::Io(_)),
            Error::Json(e) => e.is_io(),
            _ => false,
        }
    }
}

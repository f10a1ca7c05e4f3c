use thiserror::Error;

/// Errors raised anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in `{op}`: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("domain error in `{op}`: {detail}")]
    Domain { op: &'static str, detail: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("loss must be scalar-shaped, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("backward already ran on this graph")]
    BackwardTwice,

    #[error("graph is not topologically ordered at node {0}")]
    Cycle(usize),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("outcome space of {0} outcomes exceeds the enumeration limit")]
    OutcomeSpaceTooLarge(u64),

    #[error("format error: {0}")]
    Format(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("missing dataset: {0}")]
    MissingDataset(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn domain(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Domain {
            op,
            detail: detail.into(),
        }
    }

    /// Stable machine-readable kind, used in CLI error JSON.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Shape { .. } => "shape",
            Error::Domain { .. } => "domain",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::NonScalarLoss(_) => "non_scalar_loss",
            Error::BackwardTwice => "backward_twice",
            Error::Cycle(_) => "cycle",
            Error::NonFinite(_) => "non_finite",
            Error::OutcomeSpaceTooLarge(_) => "outcome_space_too_large",
            Error::Format(_) => "format",
            Error::Config(_) => "config",
            Error::MissingDataset(_) => "missing_dataset",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DiffError {
    #[error("dimension error in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("parameter `{0}` has no gradient")]
    MissingGradient(String),

    #[error("duplicate name `{0}` in parameter store")]
    DuplicateName(String),

    #[error("unknown parameter or buffer `{0}`")]
    UnknownName(String),

    #[error("checkpoint format error at byte {offset}: {detail}")]
    Format { offset: u64, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = DiffError> = std::result::Result<T, E>;

pub(crate) fn dim_err<T>(op: &'static str, detail: impl Into<String>) -> Result<T> {
    Err(DiffError::Dimension {
        op,
        detail: detail.into(),
    })
}

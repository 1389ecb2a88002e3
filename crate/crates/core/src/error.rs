use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, found {found}")]
    ShapeMismatch {
        context: &'static str,
        expected: String,
        found: String,
    },

    #[error("value out of range: {0}")]
    Range(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("shape error at {stage}: {detail}")]
    Stage { stage: String, detail: String },

    #[error("label id {id} exceeds the 16-bit PNG maximum of 65535")]
    IdOverflow { id: u32 },

    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("malformed file: {0}")]
    Format(String),

    #[error("non-finite value at index {0}")]
    NonFinite(usize),

    #[error("png decode failed: {0}")]
    PngDecode(#[from] png::DecodingError),

    #[error("png encode failed: {0}")]
    PngEncode(#[from] png::EncodingError),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) fn shape_mismatch(
    context: &'static str,
    expected: impl std::fmt::Display,
    found: impl std::fmt::Display,
) -> Error {
    Error::ShapeMismatch {
        context,
        expected: expected.to_string(),
        found: found.to_string(),
    }
}

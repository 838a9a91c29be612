use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("point lies at or behind the camera plane (z = {z})")]
    BehindCamera { z: f64 },

    #[error("render error: gaussian {index} has non-finite parameters")]
    NonFinite { index: usize },

    #[error("backend `{backend}` failed: {message}")]
    Backend { backend: String, message: String },

    #[error("bad magic bytes in scene file")]
    BadMagic,

    #[error("unsupported scene file version {0}")]
    BadVersion(u16),

    #[error("scene file checksum mismatch (stored {stored:#010x}, computed {computed:#010x})")]
    Checksum { stored: u32, computed: u32 },

    #[error("malformed scene file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn state(msg: impl Into<String>) -> Self {
        Error::InvalidState(msg.into())
    }

    pub fn backend(backend: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Backend {
            backend: backend.into(),
            message: message.into(),
        }
    }

    /// True for errors caused by caller-supplied data rather than the environment.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidArgument(_)
                | Error::InvalidState(_)
                | Error::BehindCamera { .. }
                | Error::NonFinite { .. }
                | Error::BadMagic
                | Error::BadVersion(_)
                | Error::Checksum { .. }
                | Error::Format(_)
                | Error::Json(_)
        )
    }
}

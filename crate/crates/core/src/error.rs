use std::path::PathBuf;

/// Errors produced by the engine.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A value outside the domain an operation accepts.
    #[error("domain error: {0}")]
    Domain(String),

    /// Model or run configuration is malformed.
    #[error("configuration error: {0}")]
    Config(String),

    /// Input data (images, manifests, annotations) is invalid.
    #[error("data error: {0}")]
    Data(String),

    /// A model file could not be decoded.
    #[error("corrupt model file at {location}: {reason}")]
    Corrupt { location: String, reason: String },

    #[error("requested state space of {0} combinations exceeds the exhaustive-search guard")]
    TooLarge(u128),

    #[error("no detection overlaps the given box")]
    NotFound,

    #[error("solver did not converge after {iterations} epochs (objective trace: {trace:?})")]
    NonConvergence { iterations: usize, trace: Vec<f64> },

    #[error("image error for {path:?}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}

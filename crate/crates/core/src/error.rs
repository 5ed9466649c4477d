use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// Shapes, levels or settings that do not fit together.
    #[error("configuration error: {0}")]
    Config(String),
    /// NaN/inf encountered where finite values are required.
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("degenerate embedding: pooled norm {norm:e} is below 1e-12")]
    DegenerateEmbedding { norm: f64 },
    /// Out-of-domain scalar argument (temperature, step, k, ...).
    #[error("invalid parameter: {0}")]
    Parameter(String),
    /// Malformed retrieval or metric input.
    #[error("invalid retrieval input: {0}")]
    Retrieval(String),
    /// The scene renders no visible landmark and must be regenerated.
    #[error("degenerate scene: {0}")]
    DegenerateScene(String),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }
    pub(crate) fn parameter(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }
    pub(crate) fn retrieval(msg: impl Into<String>) -> Self {
        Error::Retrieval(msg.into())
    }
}

use std::path::{Path, PathBuf};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] clnet_core::Error),
    #[error("invalid input: {0}")]
    Validation(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: cannot decode image: {source}", path.display())]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("embedding file: {0}")]
    Embeddings(String),
    /// Every problem found while loading a dataset.
    #[error("dataset has {} problem(s): {}", .0.len(), .0.join("; "))]
    Dataset(Vec<String>),
    #[error("training diverged at step {step}: loss {loss}")]
    Divergence { step: usize, loss: f64 },
}

impl Error {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// Process exit code: 3 for invalid input, 4 for numeric failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Core(clnet_core::Error::Numeric(_) | clnet_core::Error::DegenerateEmbedding { .. }) => 4,
            Error::Divergence { .. } => 4,
            _ => 3,
        }
    }
}

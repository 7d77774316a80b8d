use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to parse {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("face {face} references vertex {index}, but the mesh has {count} vertices")]
    IndexOutOfRange { face: usize, index: i64, count: usize },
    #[error("face {face} has {arity} vertices; only triangles are supported")]
    NonTriangular { face: usize, arity: usize },
    #[error("face {face} is degenerate (repeated vertex index)")]
    DegenerateFace { face: usize },
    #[error("vertex {vertex} has a non-finite coordinate")]
    NonFiniteVertex { vertex: usize },
    #[error("mesh is disconnected; component sizes {sizes:?}")]
    Disconnected { sizes: Vec<usize> },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("empty input: {0}")]
    Empty(String),
    #[error("non-finite activation in {stage} at layer {layer}")]
    NonFinite { stage: &'static str, layer: usize },
    #[error("non-finite loss (chamfer={chamfer}, kl={kl})")]
    NonFiniteLoss { chamfer: f64, kl: f64 },
    #[error("singular system: {0}")]
    Singular(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Parse { path: path.into(), message: message.into() }
    }

    pub(crate) fn invalid(message: impl Into<String>) -> Self {
        Error::InvalidArgument(message.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

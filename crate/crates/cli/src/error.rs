use std::path::PathBuf;

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] ssmkit_core::Error),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config {path}: {message}")]
    Config { path: PathBuf, message: String },
    #[error("{0}")]
    Usage(String),
    #[error("training diverged at epoch {epoch}: {reason}")]
    Diverged { epoch: usize, reason: String },
    #[error("{failed} of {total} subjects failed; see the summary in the run directory")]
    Partial { failed: usize, total: usize },
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }

    pub fn kind(&self) -> &'static str {
        use ssmkit_core::Error as E;
        match self {
            CliError::Core(e) => match e {
                E::Io { .. } => "io",
                E::Parse { .. } => "parse",
                E::IndexOutOfRange { .. } | E::NonTriangular { .. } | E::DegenerateFace { .. } => "invalid_mesh",
                E::NonFiniteVertex { .. } | E::Disconnected { .. } => "invalid_mesh",
                E::InvalidArgument(_) => "invalid_argument",
                E::Empty(_) => "empty_input",
                E::NonFinite { .. } | E::NonFiniteLoss { .. } => "non_finite",
                E::Singular(_) => "singular",
                E::Checkpoint(_) => "checkpoint",
            },
            CliError::Io { .. } => "io",
            CliError::Config { .. } => "config",
            CliError::Usage(_) => "usage",
            CliError::Diverged { .. } => "diverged",
            CliError::Partial { .. } => "partial_failure",
        }
    }

    pub fn path(&self) -> Option<&std::path::Path> {
        match self {
            CliError::Core(ssmkit_core::Error::Io { path, .. })
            | CliError::Core(ssmkit_core::Error::Parse { path, .. }) => Some(path),
            CliError::Io { path, .. } | CliError::Config { path, .. } => Some(path),
            _ => None,
        }
    }

    /// Machine-readable form printed on stderr when a command fails.
    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Body<'a> {
            kind: &'a str,
            message: String,
            #[serde(skip_serializing_if = "Option::is_none")]
            path: Option<String>,
        }
        #[derive(Serialize)]
        struct Envelope<'a> {
            error: Body<'a>,
        }
        let body =
            Body { kind: self.kind(), message: self.to_string(), path: self.path().map(|p| p.display().to_string()) };
        serde_json::to_string(&Envelope { error: body }).expect("error json")
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Bad magic, version, header or group table in a serialized file.
    #[error("format error: {0}")]
    Format(String),

    /// Payload values that violate a data invariant (NaN, non-binary bits, ragged rows).
    #[error("data error: {0}")]
    Data(String),

    /// A domain value could not be built because its invariants do not hold.
    #[error("construction error: {0}")]
    Construction(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    /// Training produced a non-finite loss.
    #[error("probe training diverged at epoch {epoch} (effective lr {lr}); loss = {loss}")]
    Divergence { epoch: usize, lr: f64, loss: f64 },

    #[error("run {run}: {source}")]
    Run {
        run: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_run(self, run: usize) -> Self {
        Error::Run {
            run,
            source: Box::new(self),
        }
    }

    /// The innermost error, with run context stripped.
    pub fn root(&self) -> &Error {
        match self {
            Error::Run { source, .. } => source.root(),
            other => other,
        }
    }

    pub fn is_divergence(&self) -> bool {
        matches!(self.root(), Error::Divergence { .. })
    }
}

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Caller supplied data that violates an operation's preconditions.
    #[error("invalid input: {0}")]
    Input(String),

    /// Scalar outside the domain of a special function.
    #[error("{function} is undefined at x = {x}")]
    Domain { function: &'static str, x: f64 },

    /// Binary fusion of two opinions that both have zero uncertainty.
    #[error("cannot fuse two dogmatic opinions (both uncertainties are zero)")]
    DogmaticFusion,

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    /// The loss became non-finite during optimisation.
    #[error("training diverged at epoch {epoch}: {message}")]
    Training { epoch: usize, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
}

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad caller input (as opposed to a failed run).
    pub fn is_input_error(&self) -> bool {
        !matches!(self, Error::Training { .. })
    }
}

use std::path::PathBuf;

use thiserror::Error;

/// Error type shared by every pipeline stage.
///
/// The variants line up with the process exit codes used by the command
/// line front end (see [`Error::exit_code`]).
#[derive(Debug, Error)]
pub enum Error {
    /// A value outside the domain of an operation (bad channel value,
    /// wrong latent length, class index out of range, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// A porosity fell outside the binning and clamping is disabled.
    #[error("porosity {value} outside binning range [{lo}, {hi}]")]
    Range { value: f64, lo: f64, hi: f64 },

    /// Invalid or mutually inconsistent configuration.
    #[error("config error: {0}")]
    Config(String),

    /// Problems with the input data (empty class, malformed log, ...).
    #[error("data error: {0}")]
    Data(String),

    /// A malformed record in a text input (CSV row, header, ...).
    #[error("parse error in {path} line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    /// A checkpoint could not be read, validated or written.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn image(path: impl Into<PathBuf>, source: image::ImageError) -> Self {
        Error::Image {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 2 config, 3 data, 4 checkpoint, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Domain(_) => 2,
            Error::Data(_) | Error::Range { .. } | Error::Parse { .. } => 3,
            Error::Checkpoint(_) => 4,
            Error::Io { .. } | Error::Image { .. } | Error::Json(_) => 1,
        }
    }
}

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid image dimensions {width}x{height}")]
    Dimension { width: usize, height: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A stored sample violates the finite, non-negative radiance invariant.
    /// `index` is the row-major pixel index counted from the top-left.
    #[error("invalid value {value} at pixel {index} (x={x}, y={y}, channel {channel})")]
    InvalidPixel {
        index: usize,
        x: usize,
        y: usize,
        channel: usize,
        value: f32,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("parameter error: {0}")]
    Parameter(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("calibration error: {0}")]
    Calibration(String),

    #[error("malformed PFM {path}: {reason}")]
    Pfm { path: PathBuf, reason: String },

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("PNG encoding failed: {0}")]
    Png(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

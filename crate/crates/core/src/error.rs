use std::path::PathBuf;

use thiserror::Error;

use crate::tiles::TileCoord;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or matrix shapes that cannot be combined.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// An operation called in the wrong lifecycle state (e.g. backward without forward).
    #[error("state error: {0}")]
    State(String),

    #[error("argument error: {0}")]
    Argument(String),

    /// Input file does not follow the expected column layout.
    #[error("schema error: {0}")]
    Schema(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: {reason}")]
    Training {
        epoch: usize,
        batch: usize,
        reason: String,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error on {path}: {reason}")]
    Image { path: PathBuf, reason: String },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// HTTP 4xx or an otherwise non-retryable tile request.
    #[error("permanent fetch error for {url}: {reason}")]
    FetchPermanent { url: String, reason: String },

    /// 5xx, timeouts and connection failures, after retries were exhausted.
    #[error("transient fetch error for {url} after {attempts} attempts: {reason}")]
    FetchTransient {
        url: String,
        attempts: usize,
        reason: String,
    },

    /// Response body is not a PNG.
    #[error("content error for {url}: {reason}")]
    Content { url: String, reason: String },

    #[error("patch error: missing tiles {}", fmt_tiles(.missing))]
    Patch { missing: Vec<TileCoord> },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    /// True for the network failure family (fetch and patch errors).
    pub fn is_network(&self) -> bool {
        matches!(
            self,
            Error::FetchPermanent { .. }
                | Error::FetchTransient { .. }
                | Error::Content { .. }
                | Error::Patch { .. }
        )
    }
}

fn fmt_tiles(tiles: &[TileCoord]) -> String {
    tiles
        .iter()
        .map(|t| format!("{}/{}/{}", t.zoom, t.x, t.y))
        .collect::<Vec<_>>()
        .join(", ")
}

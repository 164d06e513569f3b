use std::path::PathBuf;

use thiserror::Error;

use crate::frames::FrameId;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("frame mismatch: expected {expected}, found {found}")]
    Frame { expected: FrameId, found: FrameId },

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("voronoi subgraph is empty after radius filtering")]
    EmptySubgraph,

    #[error("medial-axis endpoints lie in disconnected components")]
    NoPath,

    #[error("no model reached minimum consensus ({best} of {required} points)")]
    NoConsensus { best: usize, required: usize },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("non-finite coordinate in {0}")]
    NonFinite(&'static str),

    #[error("no pose within {max_gap:.3} s of t = {timestamp:.3} s (nearest gap {gap:.3} s)")]
    StalePose {
        timestamp: f64,
        gap: f64,
        max_gap: f64,
    },

    #[error("{path}: {msg}")]
    Parse { path: PathBuf, msg: String },

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn file(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::File {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, msg: impl ToString) -> Self {
        Error::Parse {
            path: path.into(),
            msg: msg.to_string(),
        }
    }

    /// Short machine-readable tag used in report flags.
    pub fn tag(&self) -> &'static str {
        match self {
            Error::Frame { .. } => "FrameError",
            Error::DegenerateInput(_) => "DegenerateInput",
            Error::Config(_) => "ConfigError",
            Error::EmptySubgraph => "EmptySubgraph",
            Error::NoPath => "NoPath",
            Error::NoConsensus { .. } => "NoConsensus",
            Error::EmptyInput(_) => "EmptyInput",
            Error::NonFinite(_) => "NonFinite",
            Error::StalePose { .. } => "StalePose",
            Error::Parse { .. } => "ParseError",
            Error::File { .. } | Error::Io(_) => "IoError",
        }
    }
}

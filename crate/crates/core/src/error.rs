use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = D3Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum D3Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("format error: {0}")]
    Format(String),
    #[error("corrupt data: {0}")]
    Corruption(String),
    #[error("validation error at frame {frame}: {message}")]
    Validation { frame: usize, message: String },
    #[error("invalid value: {0}")]
    Invalid(String),
    #[error("manifest error: {0}")]
    Manifest(String),
    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("index out of bounds: {0}")]
    Bounds(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("model error: {0}")]
    Model(String),
    #[error("training error: {0}")]
    Training(String),
    #[error("pipeline failed for video '{video_id}': {source}")]
    Pipeline {
        video_id: String,
        #[source]
        source: Box<D3Error>,
    },
}

/// Broad failure category, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Pipeline,
}

impl D3Error {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        D3Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn in_video(self, video_id: &str) -> Self {
        match self {
            e @ D3Error::Pipeline { .. } => e,
            e => D3Error::Pipeline {
                video_id: video_id.to_string(),
                source: Box::new(e),
            },
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            D3Error::Config(_) => ErrorClass::Config,
            D3Error::Io { .. }
            | D3Error::Format(_)
            | D3Error::Corruption(_)
            | D3Error::Validation { .. }
            | D3Error::Invalid(_)
            | D3Error::Manifest(_)
            | D3Error::Parse { .. }
            | D3Error::Geometry(_) => ErrorClass::Data,
            D3Error::Infeasible(_)
            | D3Error::Bounds(_)
            | D3Error::Shape(_)
            | D3Error::Model(_)
            | D3Error::Training(_)
            | D3Error::Pipeline { .. } => ErrorClass::Pipeline,
        }
    }
}

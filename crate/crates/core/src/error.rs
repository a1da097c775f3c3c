use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the analysis engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{file}:{line}: {message}")]
    Schema {
        file: String,
        line: usize,
        message: String,
    },

    #[error("dangling {kind} reference(s): {}", ids.join(", "))]
    DanglingReference { kind: &'static str, ids: Vec<String> },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("reducible chain: comparison graph has {} strongly connected components: {}", components.len(), format_components(components))]
    ReducibleChain { components: Vec<Vec<String>> },

    #[error("no battles to aggregate")]
    NoBattles,

    #[error("no rated model in sample")]
    NoRatedModel,

    #[error("design matrix is rank deficient; collinear columns: {}", columns.join(", "))]
    RankDeficient { columns: Vec<String> },

    #[error("cluster-robust variance needs at least 2 clusters, got {0}")]
    InsufficientClusters(usize),

    #[error("zero vector for key {key}: cosine distance undefined")]
    ZeroVector { key: String },

    #[error("numerical failure: {0}")]
    Numerical(String),
}

fn format_components(components: &[Vec<String>]) -> String {
    components
        .iter()
        .map(|c| format!("{{{}}}", c.join(", ")))
        .collect::<Vec<_>>()
        .join(" ")
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn schema(file: &str, line: usize, message: impl Into<String>) -> Self {
        Error::Schema {
            file: file.to_string(),
            line,
            message: message.into(),
        }
    }

    pub(crate) fn invalid(message: impl Into<String>) -> Self {
        Error::InvalidArgument(message.into())
    }
}

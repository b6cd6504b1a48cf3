use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("impulse offset ({dr}, {dc}) lies outside a {size}x{size} kernel")]
    OffsetOutOfBounds { dr: i64, dc: i64, size: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("undefined for this input: {0}")]
    UndefinedInput(String),

    #[error("cannot split {filters} filters into {groups} non-empty groups")]
    Infeasible { filters: usize, groups: usize },

    #[error("matrix is rank deficient: rank {rank} < {required} along the {dimension} dimension")]
    Singular {
        rank: usize,
        required: usize,
        dimension: &'static str,
    },

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("bad container format: {0}")]
    Format(String),

    #[error("corrupted container: {0}")]
    Corruption(String),

    #[error("container failed validation for tensors: {}", .tensors.join(", "))]
    Validation { tensors: Vec<String> },

    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

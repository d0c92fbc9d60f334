use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid tensor shape {shape:?}: {reason}")]
    Shape { shape: Vec<usize>, reason: &'static str },

    #[error("filter {index} is the zero vector")]
    ZeroColumn { index: usize },

    #[error("pruning fraction {beta} leaves {target} of {total} filters (need 1..={total})")]
    InvalidFraction { beta: f64, target: isize, total: usize },

    #[error("Gram matrix is numerically singular (condition estimate {condition:e})")]
    Singular { condition: f64 },

    #[error("inverse Gram diagonal gamma[{index}] = {gamma:e} is not positive")]
    NotPositiveDefinite { index: usize, gamma: f64 },

    #[error("inconsistent selection: {0}")]
    Inconsistent(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("layer {layer}, hypothesis {hypothesis}: {reason}")]
    Propagation { layer: usize, hypothesis: usize, reason: String },

    #[error("cannot access {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("unsupported schema version {found} (expected {expected})")]
    Schema { found: u32, expected: u32 },

    #[error("layer {layer}: {field} has {found} values, expected {expected}")]
    LengthMismatch { layer: usize, field: &'static str, expected: usize, found: usize },

    #[error("layer {layer}: takes {expected} input channels but receives {found}")]
    Chain { layer: usize, expected: usize, found: usize },

    #[error("bad tensor magic {0:?}")]
    BadMagic([u8; 4]),

    #[error("tensor dimensions {0:?} overflow or disagree with the payload")]
    DimOverflow(Vec<u32>),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// True for errors caused by reading or decoding an external file.
    pub fn is_file_error(&self) -> bool {
        matches!(
            self,
            Error::Io { .. }
                | Error::Parse { .. }
                | Error::Schema { .. }
                | Error::LengthMismatch { .. }
                | Error::Chain { .. }
                | Error::BadMagic(_)
                | Error::DimOverflow(_)
        )
    }
}

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = TsaError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum TsaError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("line {line}: expected {expected} values, found {found}")]
    RowLengthMismatch {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("header declares {expected} rows, found {found}")]
    RowCountMismatch { expected: usize, found: usize },
    #[error("{location}: non-finite or unparsable value {value:?}")]
    InvalidValue { location: String, value: String },
    #[error("invalid matrix shape {rows}x{cols}")]
    InvalidShape { rows: usize, cols: usize },
    #[error("label file is empty")]
    EmptyLabels,
    #[error("line {0}: blank label line")]
    BlankLabel(usize),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("row {0} has zero norm; cosine similarity is undefined")]
    ZeroNorm(usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("distribution entry {0} is not strictly positive")]
    NonPositive(usize),
    #[error("empty triplet list")]
    EmptyTriplets,
    #[error("training diverged at epoch {epoch}: {what}")]
    Diverged { epoch: usize, what: String },
    #[error("could not place {wanted} centers with separation {separation} in {dims} dims")]
    CenterPlacement {
        wanted: usize,
        separation: f64,
        dims: usize,
    },
    #[error("label sequence has no background class")]
    MissingBackground,
}

impl TsaError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        TsaError::Io {
            path: path.into(),
            source,
        }
    }
}

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{0}: empty sequence")]
    EmptySequence(&'static str),

    #[error("budget {k} exceeds available length {len}")]
    Budget { k: usize, len: usize },

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("function is not deterministic: {first} != {second}")]
    Determinism { first: f64, second: f64 },

    #[error("label {label} out of range for vocabulary of {vocab}")]
    LabelRange { label: usize, vocab: usize },

    #[error("duplicate bank id {0:?}")]
    DuplicateId(String),

    #[error("key for id {0:?} has zero norm")]
    ZeroNormKey(String),

    #[error("inconsistent dims for {id:?}: expected {expected:?}, got {got:?}")]
    InconsistentDims {
        id: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    #[error("requested {requested} entries but only {available} are available")]
    NotEnoughEntries { requested: usize, available: usize },

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported format version {found} (expected {expected})")]
    Version { expected: u16, found: u16 },

    #[error("checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    Checksum { stored: u32, computed: u32 },

    #[error("truncated file: {0}")]
    Truncated(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error("modality mismatch: {0}")]
    Modality(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Json(_) => 2,
            Error::Checkpoint(_) => 4,
            _ => 3,
        }
    }
}

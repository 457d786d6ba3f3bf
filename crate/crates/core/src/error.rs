use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed file contents. `offset` is the byte offset where decoding failed.
    #[error("format error at offset {offset}: {msg}")]
    Format { offset: u64, msg: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("index {index} out of range for {len} rows")]
    OutOfRange { index: usize, len: usize },

    /// The graph has no positive pairs, so the refinement threshold is undefined.
    #[error("similarity graph has no positive entries; mean/std of positive pairs undefined")]
    NoPositives,

    #[error("no query has a relevant item in the retrieval set")]
    NoRelevant,

    #[error("non-finite loss {value} at round {round}, epoch {epoch}, batch {batch}")]
    NonFinite {
        value: f64,
        round: usize,
        epoch: usize,
        batch: usize,
    },

    #[error("cannot place {clusters} centers with pairwise angle >= 60 degrees in {d} dimensions")]
    Infeasible { clusters: usize, d: usize },
}

impl Error {
    pub(crate) fn format(offset: u64, msg: impl Into<String>) -> Self {
        Error::Format {
            offset,
            msg: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

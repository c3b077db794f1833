//! Error type shared by every module of the toolkit.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: malformed header length ({detail})")]
    MalformedHeaderLength { path: PathBuf, detail: String },

    #[error("{path}: header not valid JSON: {detail}")]
    HeaderJson { path: PathBuf, detail: String },

    #[error("{path}: tensor \"{name}\": {detail}")]
    BadRecord {
        path: PathBuf,
        name: String,
        detail: String,
    },

    #[error("{path}: tensor \"{name}\": unsupported dtype \"{dtype}\"")]
    UnsupportedDtype {
        path: PathBuf,
        name: String,
        dtype: String,
    },

    /// A file parsed, but its contents violate the format it claims to be.
    #[error("{path}: {detail}")]
    Malformed { path: PathBuf, detail: String },

    #[error("invalid manifest: {0}")]
    ManifestInvalid(String),

    #[error("tensor \"{name}\": expected shape {expected:?}, got {got:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    #[error("token id {id} out of range (vocab_size {vocab})")]
    TokenOutOfRange { id: u32, vocab: usize },

    #[error("sequence length {len} exceeds max_seq_len {max}")]
    SequenceTooLong { len: usize, max: usize },

    #[error("{path}:{line}: {detail}")]
    CorpusLine {
        path: PathBuf,
        line: usize,
        detail: String,
    },

    #[error("empty corpus: {0}")]
    EmptyCorpus(String),

    #[error("empty calibration set")]
    EmptyCalibrationSet,

    #[error("wanda requires activation stats")]
    WandaRequiresStats,

    #[error("activation stats missing norm vector for tensor \"{0}\"")]
    MissingNorms(String),

    #[error("mask universes differ; only in a: {only_a:?}, only in b: {only_b:?}")]
    MaskUniverseMismatch {
        only_a: Vec<String>,
        only_b: Vec<String>,
    },

    #[error(
        "evaluation corpus has the same fingerprint as the calibration corpus \
         used to build the masks ({fp:#018x}); use separate splits"
    )]
    CorpusOverlap { fp: u64 },

    /// Catch-all for argument validation (bad sparsity, conflicting options, ...).
    #[error("{0}")]
    InvalidArgument(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Usage and validation errors exit with status 2 at the CLI;
    /// runtime and I/O errors exit with 1.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::ManifestInvalid(_)
                | Error::ShapeMismatch { .. }
                | Error::TokenOutOfRange { .. }
                | Error::SequenceTooLong { .. }
                | Error::WandaRequiresStats
                | Error::CorpusOverlap { .. }
                | Error::InvalidArgument(_)
        )
    }
}

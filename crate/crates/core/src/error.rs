use std::io;

use crate::embedding_store::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("vector norm {norm:e} is below the 1e-12 floor")]
    ZeroVector { norm: f64 },

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value encountered: {0}")]
    NonFiniteValue(String),

    #[error("l1 norm of concept similarities {norm:e} is below 1e-8")]
    DegenerateSimilarity { norm: f64 },

    #[error("token id {0} is not in the vocabulary")]
    UnknownWord(usize),

    #[error("sentence has no tokens")]
    EmptySentence,

    #[error("batch is empty")]
    EmptyBatch,

    #[error("no similarity head is enabled")]
    NoHeadsEnabled,

    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),

    #[error("file is truncated or its declared sizes disagree with the payload")]
    TruncatedFile,

    #[error("validation failed: {}", format_violations(.0))]
    Validation(Vec<Violation>),

    #[error(transparent)]
    Io(#[from] io::Error),
}

fn format_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

pub(crate) fn check_dim(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimMismatch {
            context,
            expected,
            got,
        })
    }
}

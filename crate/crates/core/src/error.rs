// SPDX-License-Identifier: Apache-2.0

use std::path::PathBuf;

/// Errors produced anywhere in the alignment lab.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{op}: dimension mismatch between {left:?} and {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("degenerate vector: norm {norm:e} is below {eps:e}")]
    DegenerateVector { norm: f64, eps: f64 },

    #[error("mean pooling over an all-zero mask")]
    EmptyPool,

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("empty input text")]
    EmptyText,

    #[error("sequence of {len} tokens exceeds max_seq {max}")]
    SequenceTooLong { len: usize, max: usize },

    #[error("unknown projection `{name}`; valid names are {valid:?}")]
    UnknownProjection {
        name: String,
        valid: Vec<&'static str>,
    },

    #[error("checkpoint {field}: {reason}")]
    Checkpoint { field: String, reason: String },

    #[error("checkpoint is truncated or corrupt: {0}")]
    Corrupt(String),

    #[error("{path}:{line}: {reason}")]
    Parse {
        path: String,
        line: u64,
        reason: String,
    },

    #[error("duplicate word pair ({source_word}, {target_word})")]
    DuplicatePair {
        source_word: String,
        target_word: String,
    },

    #[error("pair ({source_word}, {target_word}): {inner}")]
    Pair {
        source_word: String,
        target_word: String,
        inner: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn shape(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::Shape {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

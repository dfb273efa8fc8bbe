//! One error type for the whole crate. Shape problems carry the two numbers
//! that disagreed plus a short context string so failures read like
//! "lstm_step: input len (expected 3, got 4)" rather than a bare panic.

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{context}: dimension mismatch (expected {expected}, got {got})")]
    Dim {
        context: String,
        expected: usize,
        got: usize,
    },

    #[error("{context}: empty input")]
    Empty { context: &'static str },

    #[error("no state projection for branch switch {from} -> {to} and zero-init is off")]
    MissingProjection { from: usize, to: usize },

    #[error("branch index {branch} out of range ({branches} branches)")]
    BadBranch { branch: usize, branches: usize },

    #[error("label {label} invalid for vocab of {vocab} (blank id {blank})")]
    BadLabel {
        label: usize,
        vocab: usize,
        blank: usize,
    },

    #[error("config `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("{path} line {line}: {message}")]
    Dataset {
        path: String,
        line: usize,
        message: String,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Shorthand used all over the forward/backward passes.
    pub fn dim(context: impl Into<String>, expected: usize, got: usize) -> Self {
        Error::Dim {
            context: context.into(),
            expected,
            got,
        }
    }

    pub fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }
}

use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Malformed or inconsistent arguments.
    #[error("invalid input: {0}")]
    Input(String),

    /// Shapes that must agree do not.
    #[error("dimension mismatch: {what} (expected {expected}, got {got})")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    /// The Sinkhorn iteration produced non-finite values.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// A solver failure while evaluating a specific triplet.
    #[error("triplet {index}: {source}")]
    Triplet {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    /// Training produced a non-finite loss.
    #[error("training diverged after iteration {last_finite_iteration} (last finite loss)")]
    Diverged { last_finite_iteration: usize },

    /// File parsing problems, with a location when known.
    #[error("parse error{}: {message}", location(*.line, *.column))]
    Parse {
        line: Option<usize>,
        column: Option<usize>,
        message: String,
    },
}

fn location(line: Option<usize>, column: Option<usize>) -> String {
    match (line, column) {
        (Some(l), Some(c)) => format!(" at row {l}, column {c}"),
        (Some(l), None) => format!(" at line {l}"),
        _ => String::new(),
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn input<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Input(msg.into()))
}

use thiserror::Error;

/// Errors raised by the engine. Contract violations carry a short description
/// of the broken precondition.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("KL support violation at row {row}, action {action}: reference probability is zero")]
    SupportViolation { row: usize, action: usize },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("degenerate {0}")]
    Degenerate(String),

    #[error("retry cap exhausted: produced {produced} of {requested} valid examples after {attempts} attempts")]
    RetryCapExhausted {
        produced: usize,
        requested: usize,
        attempts: usize,
    },

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch {
            context,
            expected,
            got,
        });
    }
    Ok(())
}

pub(crate) fn contract(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::Contract(msg()))
    }
}

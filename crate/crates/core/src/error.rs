use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("size error: {0}")]
    Size(String),

    #[error("state error: {0}")]
    State(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    /// Training loss became non-finite.
    #[error("training diverged at episode {episode}, step {step}: loss = {loss}")]
    Divergence {
        episode: usize,
        step: usize,
        loss: f64,
    },

    /// The special-case message passing ran too few iterations to fill a needed slot.
    #[error("incomplete fill after {iterations} iterations: node c_{node} slot {slot} is still -inf")]
    IncompleteFill {
        iterations: usize,
        node: usize,
        slot: usize,
    },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors that come from numerics rather than from bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Numerical(_) | Error::Divergence { .. } | Error::Invariant(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// The lattice admits no alignment with non-zero probability.
    #[error("degenerate lattice: {0}")]
    DegenerateLattice(String),

    /// Alignment masks prune every path; `diagonal` is the first diagonal
    /// `t + u` on which no surviving cell remains.
    #[error("over-restricted masks: no surviving alignment crosses diagonal {diagonal}")]
    OverRestricted { diagonal: usize },

    #[error("instance too large: {count} alignments exceed the cap of {cap}")]
    InstanceTooLarge { count: u128, cap: u128 },

    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Divergence { epoch: usize, loss: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}

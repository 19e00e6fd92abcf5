use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("training diverged at epoch {epoch} (loss = {loss})")]
    Diverged { epoch: usize, loss: f64 },

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    /// A size guard refused to run an enumeration.
    #[error("refused: {0}")]
    Refused(String),

    /// KL divergence against a predictive that assigns zero mass to an
    /// outcome the true distribution can produce.
    #[error("infinite loss")]
    InfiniteLoss,
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}

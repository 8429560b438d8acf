use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("selected output is not a scalar (shape {0:?})")]
    NotScalar(Vec<usize>),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("exact Shapley enumeration supports at most {max} players, got {n}; use the sampled estimator")]
    TooManyPlayers { n: usize, max: usize },

    #[error("training diverged (loss is not finite) at epoch {epoch}")]
    Diverged { epoch: usize },

    #[error(
        "baseline attack with only the extended border perturbable failed \
         (border width {border}); increase beta or analyze a weaker model"
    )]
    BaselineAttackFailed { border: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err(op: &'static str, detail: impl Into<String>) -> Error {
    Error::Shape {
        op,
        detail: detail.into(),
    }
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

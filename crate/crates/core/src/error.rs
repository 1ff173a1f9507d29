use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("{0} requires eps > 0 (singular limit)")]
    SingularLimit(&'static str),
    #[error("step {step} failed: {reason}")]
    StepFailure { step: usize, reason: String },
    #[error("singular matrix at pivot {pivot} (pivot ratio {ratio:.3e})")]
    Singular { pivot: usize, ratio: f64 },
    #[error("time step {tau:.6e} is at least twice the stability bound {tau0:.6e}")]
    TauTooLarge { tau: f64, tau0: f64 },
    #[error("configuration error: {}", .0.join("; "))]
    Config(Vec<String>),
    #[error("line search failed: {0}")]
    LineSearch(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(vec![msg.into()])
    }

    /// Tag a solver error with the time step where it happened.
    pub fn at_step(self, step: usize) -> Self {
        match self {
            Error::StepFailure { reason, .. } => Error::StepFailure { step, reason },
            Error::Singular { pivot, ratio } => Error::StepFailure {
                step,
                reason: format!("singular matrix at pivot {pivot} (pivot ratio {ratio:.3e})"),
            },
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

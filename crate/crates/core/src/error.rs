use thiserror::Error;

pub type Result<T, E = SbfmError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum SbfmError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("time {t} outside the admissible range [{lo}, {hi}]")]
    TimeDomain { t: f64, lo: f64, hi: f64 },

    #[error("conditional score is undefined for sigma = 0")]
    DegenerateScore,

    #[error("non-finite state at integration step {step}")]
    Divergence { step: usize },

    #[error("non-finite activation in layer {layer}")]
    NonFiniteActivation { layer: String },

    #[error("non-finite gradient at optimizer step {step}")]
    NonFiniteGradient { step: usize },

    #[error("validation loss became non-finite at epoch {epoch}")]
    TrainingDiverged { epoch: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

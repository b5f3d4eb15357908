use thiserror::Error;
use windflow_tensor::TensorError;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("value {value} outside [0, {v_max}]")]
    OutOfRange { value: f64, v_max: f64 },
    #[error("unsupported rotation angle {0} (must be a multiple of 45 degrees)")]
    UnsupportedAngle(i64),
    #[error("corrupt dataset container: {0}")]
    CorruptContainer(String),
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("checkpoint does not match the requested model: {0}")]
    SpecMismatch(String),
    #[error("flow solver diverged at step {step}")]
    Diverged { step: usize },
    #[error("shape error: {0}")]
    Shape(String),
    #[error("degenerate weight: power iteration produced a zero vector")]
    DegenerateWeight,
    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("every pixel fell below the relative-error guard")]
    AllPixelsExcluded,
    #[error("empty batch")]
    EmptyBatch,
    #[error("wind rose is not normalized: {0}")]
    UnnormalizedRose(String),
    #[error("comfort criteria do not match the exceedance maps: {0}")]
    CriteriaShapeMismatch(String),
    #[error("unknown {kind} '{name}'")]
    UnknownName { kind: &'static str, name: String },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

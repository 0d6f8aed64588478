//! Error types shared across the crate.

use thiserror::Error;

/// Failures in graph construction, evaluation, or differentiation.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum GradError {
    /// A forward value became NaN or infinite. Reported eagerly with the
    /// node that first produced it.
    #[error("non-finite value at node {node} ({op})")]
    NonFinite { node: usize, op: String },

    /// Backward was requested from a node that is not a scalar.
    #[error("loss must be a scalar, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },

    /// An accumulated parameter gradient is NaN or infinite.
    #[error("non-finite gradient for parameter {param:?}")]
    NonFiniteGradient { param: String },
}

/// Failures in samplers and distribution primitives.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("categorical sample requires non-empty logits")]
    EmptyLogits,

    #[error("logits must be finite, got {value} at index {index}")]
    NonFiniteLogit { index: usize, value: f64 },

    #[error("bernoulli probability must lie in [0, 1], got {0}")]
    InvalidProbability(f64),
}

/// Failures specific to model evaluation.
#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Grad(#[from] GradError),

    #[error(transparent)]
    Stats(#[from] StatsError),

    #[error("non-finite objective: {0}")]
    NonFiniteObjective(String),

    #[error("step {step} produced a non-finite intermediate in {what}")]
    NonFiniteStep { step: usize, what: String },
}

/// Failures in the closed-form Gaussian bound computations.
#[derive(Debug, Error)]
pub enum BoundsError {
    #[error("covariance matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("finite-support enumeration too large: {configs} configurations (limit {limit})")]
    EnumerationTooLarge { configs: u64, limit: u64 },
}

/// Failures reading or writing parameter checkpoints.
#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("not a checkpoint file (bad magic)")]
    BadMagic,

    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),

    #[error("malformed checkpoint header: {0}")]
    MalformedHeader(String),

    #[error("checkpoint payload is shorter than its header promises")]
    Truncated,

    #[error("parameter {name:?} has shape {found:?} in the checkpoint but {expected:?} in the store")]
    ShapeMismatch { name: String, expected: Vec<usize>, found: Vec<usize> },

    #[error("parameter {0:?} missing from the checkpoint")]
    MissingParam(String),

    #[error("checkpoint contains unknown parameter {0:?}")]
    UnknownParam(String),
}

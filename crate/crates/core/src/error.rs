use alloc::string::String;

/// Errors raised by the core crate.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("unknown dataset spec `{name}`; registered specs: {registered}")]
    UnknownSpec { name: String, registered: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("token id {id} out of range for vocabulary of size {vocab_size}")]
    TokenOutOfRange { id: u32, vocab_size: usize },

    #[error("position embeddings were already applied")]
    PositionsAlreadyApplied,

    #[error("sequence length {len} exceeds position table of {max_positions}")]
    PositionOverflow { len: usize, max_positions: usize },

    #[error("modality order violated: {0}")]
    ModalityOrder(String),

    #[error("non-finite activations after encoder layer {layer}")]
    NonFiniteActivation { layer: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("zero-norm feature row {row} in {branch}")]
    ZeroNormFeature { row: usize, branch: &'static str },

    #[error("row {row} has no valid positions")]
    AllMasked { row: usize },

    #[error("position {index} is out of range or masked")]
    BadShuffleIndex { index: usize },

    #[error("label {0} is not binary")]
    NonBinaryLabel(u8),

    #[error("degenerate targets: {0}")]
    DegenerateTargets(String),

    #[error("zero variance in {0}")]
    ZeroVariance(&'static str),

    #[error("metric `{metric}` is not compatible with task type `{task}`")]
    MetricTaskMismatch { metric: &'static str, task: &'static str },

    #[error("non-finite loss {loss} at step {step} ({objective})")]
    NonFiniteLoss { step: u64, loss: f64, objective: String },

    #[error("unsupported modality for {0}")]
    UnsupportedModality(&'static str),
}

pub type Result<T> = core::result::Result<T, Error>;

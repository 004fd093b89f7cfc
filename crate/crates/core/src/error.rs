use thiserror::Error;

use crate::tree_flow::VertexId;

#[derive(Debug, Error)]
pub enum CascadeError {
    #[error("depth mismatch: {0} vs {1}")]
    DepthMismatch(u32, u32),

    #[error("invalid flow: {0}")]
    InvalidFlow(String),

    #[error("flow is not normalized (root mass {0})")]
    Unnormalized(f64),

    #[error("degenerate flow: zero mass at vertex {0}")]
    DegenerateFlow(VertexId),

    #[error("value out of range: {0}")]
    OutOfRange(String),

    #[error("h = {0} is outside the finite-moment domain")]
    MomentDomain(f64),

    #[error("nonpositive weight {weight} at vertex {vertex}")]
    NonpositiveWeight { vertex: VertexId, weight: f64 },

    #[error("depth {depth} is too shallow, need at least {min}")]
    TooShallow { depth: u32, min: u32 },

    #[error("depth {depth} exceeds the limit of {max}")]
    DepthTooLarge { depth: u32, max: u32 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("operation requires Gaussian weights")]
    NonGaussian,

    #[error("vertices {0} and {1} are in ancestral relation")]
    AncestorPair(VertexId, VertexId),

    #[error("ODE denominator vanished at t = {0}")]
    DenominatorUnderflow(f64),

    #[error("unknown test: {0}")]
    UnknownTest(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, CascadeError>;

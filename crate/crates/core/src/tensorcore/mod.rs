//! Deterministic reverse-mode autodiff, Adam, and seeded randomness.

mod adam;
mod attention;
mod battery;
mod gradcheck;
mod graph;
mod param;
mod rng;
mod tensor;

pub use adam::{AdamHyper, AdamState};
pub use attention::AttentionSpec;
pub use battery::{check_primitive, PrimitiveCase};
pub use gradcheck::{grad_check, relative_error, GradCheckConfig, GradCheckReport, LossBuilder};
pub use graph::{Gradients, Graph, Nonlinearity, Primitive, PrimitiveKind, Segment, Var};
pub use param::{ParamStore, Parameter};
pub use rng::RngStream;
pub use tensor::{Real, Tensor};

#[derive(Debug, thiserror::Error)]
pub enum TensorError {
    #[error("data length {len} does not match shape {shape:?}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("{primitive}: shape mismatch: {detail}")]
    ShapeMismatch { primitive: &'static str, detail: String },
    #[error("unknown primitive `{0}`")]
    UnknownPrimitive(String),
    #[error("non-finite value produced by node {node} ({primitive})")]
    NonFinite { node: usize, primitive: &'static str },
    #[error("non-finite gradient for `{0}`")]
    NonFiniteGradient(String),
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("tape already consumed")]
    TapeConsumed,
    #[error("duplicate parameter `{0}`")]
    DuplicateParameter(String),
    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),
    #[error("gradient supplied for frozen parameter `{0}`")]
    FrozenGradient(String),
    #[error("non-deterministic graph builder: {0}")]
    NonDeterministic(String),
    #[error("{0}")]
    Invalid(String),
}

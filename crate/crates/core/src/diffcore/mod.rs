//! Small reverse-mode automatic differentiation library: dense tensors,
//! a define-by-run tape, Adam, and a binary checkpoint format.

mod adam;
pub mod checkpoint;
pub mod gradcheck;
mod graph;
pub mod nn;
mod params;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use graph::{composite_ray, sigmoid, softplus, CompositeLayout, GatherPattern, Gradients, Graph, RayComposite, Var};
pub use params::{ParamId, ParamStore};
pub use tensor::{Real, Tensor};

#[derive(Debug, thiserror::Error)]
pub enum DiffError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("backward called on an empty tape")]
    EmptyTape,
    #[error("non-finite gradient for parameter '{0}'")]
    NonFiniteGradient(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[cfg(test)]
mod tests;

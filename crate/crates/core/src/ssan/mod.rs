//! Surface network distilled from a radiance field: a truncated signed
//! distance with normals, appearance features and a small shading network.

pub mod distill;
pub mod losses;
pub mod model;
pub mod projection;

pub use distill::{
    build_batch, distill, distill_field, median_point_residuals, step_loss, CachedRay, DistillConfig, DistillReport,
    LossRow, PercentileCache, StepBatch,
};
pub use losses::{finite_diff_normal, FdNormal, LossWeights};
pub use model::{Eta, EtaNet, RadialPrior, SsanConfig, SsanModel, SsanNet, SsanOutput, FEATURES};
pub use projection::{project_to_zero_level, Projected};

use crate::diffcore::DiffError;
use crate::field::FieldError;

#[derive(Debug, thiserror::Error)]
pub enum SsanError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("every ray in the batch is flagged low-opacity")]
    EmptyBatch,
    #[error("non-finite output from the {0}")]
    NonFinite(String),
    #[error("distillation diverged at step {step}: {breakdown}")]
    Diverged { step: usize, breakdown: String },
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

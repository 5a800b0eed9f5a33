//! Isosurface extraction, feature baking and mesh export.

pub mod bake;
pub mod export;
pub mod grid;
pub mod mc;
pub mod mesh;
mod tables;

use std::path::PathBuf;

pub use bake::{atlas_layout, bake_vertex_features, build_face_texture, Atlas, FeaturedMesh, Features, ATLAS_THRESHOLD};
pub use export::{load_featured, parse_obj, read_obj, save_featured, ObjData};
pub use grid::{sample_grid, ScalarGrid};
pub use mc::marching_cubes;
pub use mesh::TriMesh;

#[derive(Debug, thiserror::Error)]
pub enum MeshError {
    #[error("invalid mesh input: {0}")]
    Invalid(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("{faces} faces need a {size}x{size} atlas, over the 16384 limit; use per-vertex features instead")]
    AtlasTooLarge { faces: usize, size: usize },
    #[error("{}: line {line}: {reason}", path.display())]
    Parse { path: PathBuf, line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Image(#[from] crate::image::ImageError),
    #[error("model evaluation failed: {0}")]
    Model(String),
}

impl From<crate::ssan::SsanError> for MeshError {
    fn from(e: crate::ssan::SsanError) -> Self {
        MeshError::Model(e.to_string())
    }
}

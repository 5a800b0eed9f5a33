//! Distillation of radiance fields into textured triangle meshes.

pub mod dataset;
pub mod diffcore;
pub mod field;
pub mod image;
pub mod config;
pub mod io;
pub mod meshing;
pub mod metrics;
pub mod pipeline;
pub mod raster;
pub mod scenes;
pub mod seed;
pub mod ssan;

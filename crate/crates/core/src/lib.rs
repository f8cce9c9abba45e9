//! UV-space head avatars built from 3D Gaussians that carry local tri-plane
//! feature payloads.
//!
//! Modules: differentiable volume rendering with K-nearest RBF blending
//! (`render`, `grad`), multi-view fitting (`fit`, `losses`), diffusion math
//! on unfolded UV tensors (`diffusion`), UV-space editing (`edit`) and file
//! formats (`io`).

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod checks;
pub mod diffusion;
pub mod edit;
pub mod error;
pub mod fit;
pub mod grad;
pub mod io;
pub mod losses;
pub mod model;
pub mod render;
pub mod spatial;

pub use error::{Error, Result};
pub use model::{
    AnchorGrid, Camera, GaussianPose, RenderConfig, TriPlanePayload, UVAvatar, Vec3,
};
pub use render::{RenderMlp, RenderOutput};
pub use spatial::UniformGridIndex;

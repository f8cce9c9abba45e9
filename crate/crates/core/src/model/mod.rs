//! Domain types: Gaussian poses, tri-plane payloads, the UV avatar grid,
//! cameras and render settings.

mod avatar;
mod camera;
mod config;
mod pose;

pub use avatar::{init_from_anchors, AnchorGrid, TriPlanePayload, UVAvatar, POSE_DIM};
pub use camera::{Camera, Ray};
pub use config::RenderConfig;
pub use pose::{
    euler_from_matrix, precision_matrix, rbf_influence, rotation_derivatives, rotation_matrix, FramePoint,
    world_to_local, GaussianPose, LocalFrame, LOCAL_EXTENT_SIGMAS,
};

pub type Vec3 = nalgebra::Vector3<f64>;
pub type Mat3 = nalgebra::Matrix3<f64>;

//! Variance-preserving diffusion over unfolded UV tensors.

mod sampler;
mod schedule;
mod tensor;

pub use sampler::{
    denoiser_loss, inpaint_sample, q_sample, reverse_sample, timesteps, AnalyticGaussDenoiser, Denoiser,
};
pub use schedule::{cosine_schedule, DiffusionSchedule, COSINE_OFFSET};
pub use tensor::{
    denormalize_avatar, denormalize_center, denormalize_payload, denormalize_radius, denormalize_rotation,
    denormalize_texels, fold, normalize_avatar, normalize_center, normalize_payload, normalize_radius,
    normalize_rotation, normalize_texels, unfold, TexelTensor, UVTensor, RADIUS_FLOOR,
};

use crate::error::{Error, Result};
use crate::model::{UVAvatar, Vec3};

/// Normalized tensor of an avatar headed for the diffusion model. With
/// `neutral` set, the avatar's anchors must equal those vertices at the
/// `f32` precision of the avatar file.
pub fn export_for_diffusion(avatar: &UVAvatar, neutral: Option<&[Vec3]>) -> Result<UVTensor> {
    if let Some(v) = neutral {
        let same = |a: &Vec3, b: &Vec3| a.iter().zip(b.iter()).all(|(x, y)| *x as f32 == *y as f32);
        if v.len() != avatar.anchors.len() || !v.iter().zip(&avatar.anchors).all(|(a, b)| same(a, b)) {
            return Err(Error::invalid(
                "avatar is not in the neutral expression: anchors differ from the neutral vertices",
            ));
        }
    }
    normalize_avatar(avatar)
}

//! Differentiable volume rendering of a [`UVAvatar`].
//!
//! Each sample along a ray queries its K nearest Gaussians. Every neighbor
//! maps the point into its local cube, samples its tri-plane payload and
//! shades the feature with the shared [`RenderMlp`]. Colors are blended with
//! normalized influence weights; opacity uses the raw influence so density
//! falls off away from all Gaussians.

mod engine;
mod mlp;
mod triplane;

pub use engine::{
    composite, composite_backward, hash_record, RayAdjoint, RayOutput, RayRecord, SampleRec,
    Scene, SceneGrads, ALPHA_MAX,
};
pub use mlp::{mlp_forward, sigmoid, MlpEval, RenderMlp, MLP_HIDDEN, MLP_IN, MLP_OUT, MLP_PARAMS};
pub use triplane::{plane_cells, sample_backward, sample_triplane, sample_with_cells, PlaneCell};

use crate::error::{Error, Result};
use crate::model::{Camera, LocalFrame, Ray, RenderConfig, UVAvatar, Vec3};
use crate::spatial::UniformGridIndex;

/// Per-pixel color, expected depth and accumulated opacity, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput {
    pub width: usize,
    pub height: usize,
    /// `height × width × 3`.
    pub color: Vec<f64>,
    pub depth: Vec<f64>,
    pub alpha: Vec<f64>,
}

impl RenderOutput {
    pub fn pixel(&self, px: usize, py: usize) -> [f64; 3] {
        let i = 3 * (py * self.width + px);
        [self.color[i], self.color[i + 1], self.color[i + 2]]
    }
}

/// Renders every pixel of `camera`.
pub fn render_image(
    avatar: &UVAvatar,
    mlp: &RenderMlp,
    camera: &Camera,
    cfg: &RenderConfig,
) -> Result<RenderOutput> {
    let scene = Scene::new(avatar, mlp, cfg)?;
    render_scene(&scene, camera)
}

pub fn render_scene(scene: &Scene<'_>, camera: &Camera) -> Result<RenderOutput> {
    let pixels: Vec<(usize, usize)> = (0..camera.height)
        .flat_map(|y| (0..camera.width).map(move |x| (x, y)))
        .collect();
    let rays = scene.render_pixels(camera, &pixels)?;
    let mut out = RenderOutput {
        width: camera.width,
        height: camera.height,
        color: Vec::with_capacity(pixels.len() * 3),
        depth: Vec::with_capacity(pixels.len()),
        alpha: Vec::with_capacity(pixels.len()),
    };
    for (r, _) in rays {
        out.color.extend_from_slice(&r.color);
        out.depth.push(r.depth);
        out.alpha.push(r.alpha);
    }
    Ok(out)
}

/// Marches a single ray between `near` and `far`.
pub fn march_ray(
    avatar: &UVAvatar,
    mlp: &RenderMlp,
    ray: &Ray,
    near: f64,
    far: f64,
    cfg: &RenderConfig,
    pixel_id: u64,
) -> Result<RayOutput> {
    let scene = Scene::new(avatar, mlp, cfg)?;
    Ok(scene.march(ray, pixel_id, near, far)?.0)
}

/// Blended color and opacity at `x` from its K nearest Gaussians, without
/// the empty-space floor.
pub fn blend_point(
    avatar: &UVAvatar,
    mlp: &RenderMlp,
    x: &Vec3,
    cfg: &RenderConfig,
    index: &UniformGridIndex,
) -> Result<([f64; 3], f64)> {
    cfg.validate()?;
    let neighbors = index.knn(x, cfg.knn_k)?;
    let mut gs = Vec::with_capacity(neighbors.len());
    let mut cols = Vec::with_capacity(neighbors.len());
    for n in &neighbors {
        let pose = &avatar.poses[n.index];
        let pt = LocalFrame::new(pose)?.eval(&(x - pose.center), cfg.eta, cfg.tau);
        let f = sample_triplane(&avatar.payloads[n.index], &pt.u);
        gs.push(pt.g);
        cols.push(mlp_forward(mlp, &f));
    }
    let z: f64 = gs.iter().sum::<f64>() + cfg.epsilon;
    let mut color = [0.0; 3];
    let mut alpha = 0.0;
    for (g, (c, a)) in gs.iter().zip(&cols) {
        for k in 0..3 {
            color[k] += g / z * c[k];
        }
        alpha += g * a;
    }
    Ok((color, alpha.clamp(0.0, ALPHA_MAX)))
}

/// Peak signal-to-noise ratio in dB for images in `[0, 1]`; identical
/// inputs give `f64::INFINITY`.
pub fn psnr(image: &[f64], reference: &[f64]) -> Result<f64> {
    if image.len() != reference.len() || image.is_empty() {
        return Err(Error::invalid(format!(
            "psnr needs equal non-empty inputs, got {} and {}",
            image.len(),
            reference.len()
        )));
    }
    let mse = image
        .iter()
        .zip(reference)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / image.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (1.0 / mse).log10())
}

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::avatar_file::{load_avatar, save_avatar};
use super::image::{read_pfm, read_pnm, write_pfm, write_pgm, write_ppm};
use super::text::{load_anchor_grid, load_cameras, load_mlp, mlp_sidecar, save_anchor_grid, save_cameras, save_mlp};
use super::write_atomic;
use crate::error::{Error, Result};
use crate::fit::View;
use crate::model::{init_from_anchors, rotation_matrix, AnchorGrid, Camera, RenderConfig, UVAvatar, Vec3};
use crate::render::{render_image, RenderMlp, RenderOutput, MLP_HIDDEN, MLP_IN, MLP_OUT};

/// Procedural reference shapes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ToyKind {
    /// Smoothly shaded sphere.
    Sphere,
    /// Two overlapping spheres side by side.
    TwoLobe,
    /// Sphere with a world-space checkerboard.
    CheckerSphere,
}

impl std::str::FromStr for ToyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sphere" => Ok(ToyKind::Sphere),
            "two-lobe" => Ok(ToyKind::TwoLobe),
            "checker-sphere" => Ok(ToyKind::CheckerSphere),
            other => Err(Error::invalid(format!("unknown toy dataset kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToySpec {
    pub kind: ToyKind,
    pub views: usize,
    /// Image width and height in pixels.
    pub resolution: usize,
    pub seed: u64,
    /// Anchor grid side; the avatar holds `grid²` Gaussians.
    pub grid: usize,
    /// Reference tri-plane resolution.
    pub payload_res: usize,
    pub render: RenderConfig,
}

impl ToySpec {
    pub fn new(kind: ToyKind) -> Self {
        ToySpec {
            kind,
            views: 16,
            resolution: 32,
            seed: 0,
            grid: 8,
            payload_res: 8,
            render: RenderConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.views == 0 || self.resolution == 0 || self.grid < 2 || self.payload_res < 2 {
            return Err(Error::invalid("toy dataset needs views, resolution >= 1 and grid, payload_res >= 2"));
        }
        self.render.validate()
    }
}

/// Reference scene and its rendered views.
#[derive(Debug, Clone)]
pub struct ToyScene {
    pub spec: ToySpec,
    pub anchors: AnchorGrid,
    pub reference: UVAvatar,
    pub mlp: RenderMlp,
    pub cameras: Vec<Camera>,
    pub renders: Vec<RenderOutput>,
}

impl ToyScene {
    pub fn views(&self) -> Vec<View> {
        self.cameras
            .iter()
            .zip(&self.renders)
            .map(|(c, r)| View {
                camera: c.clone(),
                color: r.color.clone(),
                depth: Some(r.depth.clone()),
                mask: Some(r.alpha.clone()),
            })
            .collect()
    }
}

pub const SPHERE_RADIUS: f64 = 0.12;
const LOBE_OFFSET: f64 = 0.07;
const LOBE_RADIUS: f64 = 0.09;
const CAMERA_DISTANCE: f64 = 0.7;
const OPACITY_LOGIT: f64 = 3.0;
const CHECKER_FREQ: f64 = 60.0;

fn sphere_anchor(center: Vec3, radius: f64, theta: f64, phi: f64) -> (Vec3, Vec3) {
    let n = Vec3::new(theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos());
    (center + n * radius, n)
}

/// Latitude-longitude rows on one or two spheres.
pub fn toy_anchors(kind: ToyKind, grid: usize) -> Result<AnchorGrid> {
    let lobes: Vec<(Vec3, f64, usize)> = match kind {
        ToyKind::TwoLobe => {
            let top = grid / 2;
            vec![
                (Vec3::new(-LOBE_OFFSET, 0.0, 0.0), LOBE_RADIUS, top),
                (Vec3::new(LOBE_OFFSET, 0.0, 0.0), LOBE_RADIUS, grid - top),
            ]
        }
        _ => vec![(Vec3::zeros(), SPHERE_RADIUS, grid)],
    };
    let mut g = AnchorGrid {
        height: grid,
        width: grid,
        positions: Vec::new(),
        normals: Vec::new(),
        scales: Vec::new(),
    };
    for (center, radius, rows) in lobes {
        let d_theta = PI * radius / rows as f64;
        for h in 0..rows {
            let theta = PI * (h as f64 + 0.5) / rows as f64;
            let d_phi = 2.0 * PI * radius * theta.sin() / grid as f64;
            for w in 0..grid {
                let phi = 2.0 * PI * (w as f64 + 0.5 * (h % 2) as f64) / grid as f64;
                let (p, n) = sphere_anchor(center, radius, theta, phi);
                g.positions.push(p);
                g.normals.push(n);
                g.scales.push(0.55 * d_theta.max(d_phi));
            }
        }
    }
    g.validate()?;
    Ok(g)
}

fn logit(c: f64) -> f64 {
    (c / (1.0 - c)).ln()
}

fn surface_color(kind: ToyKind, p: &Vec3, phase: f64) -> [f64; 3] {
    match kind {
        ToyKind::CheckerSphere => {
            let k = CHECKER_FREQ;
            let s = (k * p.x + phase).sin() * (k * p.y + phase).sin() * (k * p.z + phase).sin();
            if s >= 0.0 {
                [0.85, 0.2, 0.15]
            } else {
                [0.15, 0.35, 0.8]
            }
        }
        _ => {
            let n = p.normalize();
            [0.5 + 0.35 * n.x, 0.5 + 0.35 * n.y, 0.5 + 0.35 * n.z]
        }
    }
}

/// Shading network that passes the first four feature channels through as
/// logits, using paired ReLU units `relu(f) − relu(−f)`.
pub fn passthrough_mlp() -> RenderMlp {
    let mut mlp = RenderMlp::zeros();
    for i in 0..MLP_OUT {
        mlp.w1[i * MLP_HIDDEN + 2 * i] = 1.0;
        mlp.w1[i * MLP_HIDDEN + 2 * i + 1] = -1.0;
        mlp.w2[2 * i * MLP_OUT + i] = 1.0;
        mlp.w2[(2 * i + 1) * MLP_OUT + i] = -1.0;
    }
    const { assert!(MLP_IN >= MLP_OUT) };
    mlp
}

/// Reference avatar: poses seeded from the anchors and the XY plane of each
/// payload holding the surface color logits over the tangent plane.
pub fn toy_reference(kind: ToyKind, anchors: &AnchorGrid, res: usize, phase: f64) -> Result<UVAvatar> {
    let mut avatar = init_from_anchors(anchors, res, MLP_IN)?;
    for (pose, payload) in avatar.poses.iter().zip(avatar.payloads.iter_mut()) {
        let rot = rotation_matrix(&pose.rotation)?;
        for i in 0..res {
            for j in 0..res {
                let u = |k: usize| -1.0 + 2.0 * k as f64 / (res - 1) as f64;
                let local = Vec3::new(3.0 * pose.radii.x * u(i), 3.0 * pose.radii.y * u(j), 0.0);
                let color = surface_color(kind, &(pose.center + rot * local), phase);
                let node = payload.node_mut(0, i, j);
                for c in 0..3 {
                    node[c] = logit(color[c]);
                }
                node[3] = OPACITY_LOGIT;
            }
        }
    }
    Ok(avatar.quantized_f32())
}

/// Views on rings around the origin with seeded azimuth offsets.
pub fn toy_cameras(views: usize, resolution: usize, seed: u64) -> Result<Vec<Camera>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let offset = rng.random_range(0.0..2.0 * PI);
    (0..views)
        .map(|v| {
            let elev: f64 = match v % 3 {
                0 => 0.0,
                1 => 0.6,
                _ => -0.6,
            };
            let azim = offset + 2.0 * PI * v as f64 / views as f64 + rng.random_range(-0.1..0.1);
            let eye = Vec3::new(elev.cos() * azim.cos(), elev.cos() * azim.sin(), elev.sin()) * CAMERA_DISTANCE;
            Camera::look_at(
                eye,
                Vec3::zeros(),
                Vec3::z(),
                0.55,
                resolution,
                resolution,
                CAMERA_DISTANCE - 0.25,
                CAMERA_DISTANCE + 0.25,
            )
        })
        .collect()
}

/// Builds the reference scene and renders every view.
pub fn toy_scene(spec: &ToySpec) -> Result<ToyScene> {
    spec.validate()?;
    let anchors = toy_anchors(spec.kind, spec.grid)?;
    let phase = ChaCha8Rng::seed_from_u64(spec.seed ^ 0xC4EC).random_range(0.0..PI);
    let reference = toy_reference(spec.kind, &anchors, spec.payload_res, phase)?;
    let mlp = passthrough_mlp();
    let cameras = toy_cameras(spec.views, spec.resolution, spec.seed)?;
    let renders = cameras
        .iter()
        .map(|c| render_image(&reference, &mlp, c, &spec.render))
        .collect::<Result<Vec<_>>>()?;
    Ok(ToyScene {
        spec: spec.clone(),
        anchors,
        reference,
        mlp,
        cameras,
        renders,
    })
}

/// Scale declared for depth previews.
const DEPTH_PREVIEW_SCALE: f64 = 1.0;

fn view_name(dir: &Path, i: usize, suffix: &str) -> std::path::PathBuf {
    dir.join("views").join(format!("{i:03}_{suffix}"))
}

/// Writes the toy scene:
///
/// ```text
/// dataset.json  anchors.txt  cameras.json  reference.guv  reference.guv.mlp.json
/// views/NNN_color.ppm  views/NNN_depth.pfm  views/NNN_depth.pgm  views/NNN_mask.pgm
/// ```
pub fn generate_toy_dataset(spec: &ToySpec, dir: impl AsRef<Path>) -> Result<ToyScene> {
    let dir = dir.as_ref();
    let scene = toy_scene(spec)?;
    std::fs::create_dir_all(dir.join("views")).map_err(|e| Error::io(dir, e))?;
    let mut meta = serde_json::to_string_pretty(spec)?;
    meta.push('\n');
    write_atomic(&dir.join("dataset.json"), meta.as_bytes())?;
    save_anchor_grid(&scene.anchors, dir.join("anchors.txt"))?;
    save_cameras(&scene.cameras, dir.join("cameras.json"))?;
    let reference = dir.join("reference.guv");
    save_avatar(&scene.reference, &reference)?;
    save_mlp(&scene.mlp, mlp_sidecar(&reference))?;
    for (i, r) in scene.renders.iter().enumerate() {
        write_ppm(view_name(dir, i, "color.ppm"), r.width, r.height, &r.color)?;
        write_pfm(view_name(dir, i, "depth.pfm"), r.width, r.height, &r.depth)?;
        write_pgm(view_name(dir, i, "depth.pgm"), r.width, r.height, &r.depth, DEPTH_PREVIEW_SCALE)?;
        write_pgm(view_name(dir, i, "mask.pgm"), r.width, r.height, &r.alpha, 1.0)?;
    }
    Ok(scene)
}

/// A dataset directory read back from disk.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub spec: ToySpec,
    pub anchors: AnchorGrid,
    pub views: Vec<View>,
}

impl Dataset {
    pub fn cameras(&self) -> Vec<Camera> {
        self.views.iter().map(|v| v.camera.clone()).collect()
    }
}

pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let meta_path = dir.join("dataset.json");
    let meta = std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let spec: ToySpec = serde_json::from_str(&meta).map_err(|e| Error::Format {
        path: meta_path.clone(),
        detail: e.to_string(),
    })?;
    let anchors = load_anchor_grid(dir.join("anchors.txt"))?;
    let cameras = load_cameras(dir.join("cameras.json"))?;
    let mut views = Vec::with_capacity(cameras.len());
    for (i, camera) in cameras.into_iter().enumerate() {
        let color_path = view_name(dir, i, "color.ppm");
        let color = read_pnm(&color_path)?;
        let (dw, dh, depth) = read_pfm(view_name(dir, i, "depth.pfm"))?;
        let mask = read_pnm(view_name(dir, i, "mask.pgm"))?;
        let dims = (camera.width, camera.height);
        if color.channels != 3 || (color.width, color.height) != dims || (dw, dh) != dims || (mask.width, mask.height) != dims {
            return Err(Error::Format {
                path: color_path,
                detail: format!("view {i} rasters do not match its {}x{} camera", dims.0, dims.1),
            });
        }
        views.push(View {
            camera,
            color: color.values(),
            depth: Some(depth),
            mask: Some(mask.values()),
        });
    }
    Ok(Dataset { spec, anchors, views })
}

/// Reference avatar and shading network stored with a dataset.
pub fn load_reference(dir: impl AsRef<Path>) -> Result<(UVAvatar, RenderMlp)> {
    let path = dir.as_ref().join("reference.guv");
    Ok((load_avatar(&path)?, load_mlp(mlp_sidecar(&path))?))
}

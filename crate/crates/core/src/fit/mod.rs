//! Multi-view fitting of an avatar to posed images.

mod decoder;
mod objective;

pub use decoder::{LatentDecoder, LATENT_DIM};
pub use objective::{pack_params, unpack_params, GroupRates, PatchTarget, SceneObjective};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grad::{AdamW, AdamWConfig, Objective};
use crate::losses::LossWeights;
use crate::model::{init_from_anchors, AnchorGrid, Camera, RenderConfig, UVAvatar};
use crate::render::{psnr, render_image, RenderMlp};

/// One posed training image. Maps are row-major; `color` has three scalars
/// per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct View {
    pub camera: Camera,
    pub color: Vec<f64>,
    pub depth: Option<Vec<f64>>,
    pub mask: Option<Vec<f64>>,
}

impl View {
    pub fn validate(&self) -> Result<()> {
        self.camera.validate()?;
        let n = self.camera.width * self.camera.height;
        let bad = self.color.len() != 3 * n
            || self.depth.as_ref().is_some_and(|d| d.len() != n)
            || self.mask.as_ref().is_some_and(|m| m.len() != n);
        if bad {
            return Err(Error::invalid(format!(
                "view maps do not match the {}x{} camera",
                self.camera.width, self.camera.height
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitMode {
    /// Payloads are free parameters.
    Direct,
    /// Payloads come from a latent code through a shared decoder.
    Latent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PayloadKind {
    TriPlane,
    /// A single feature vector per texel (a resolution-1 tri-plane).
    Vector,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackgroundMode {
    White,
    /// White half of the time, otherwise a uniform random color.
    RandomWhiteBiased,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub iterations: usize,
    pub patch_size: usize,
    pub rates: GroupRates,
    pub optimizer: AdamWConfig,
    pub background: BackgroundMode,
    pub seed: u64,
    pub mode: FitMode,
    pub payload: PayloadKind,
    /// Tri-plane resolution `S`.
    pub res: usize,
    pub channels: usize,
    pub decoder_hidden: usize,
    /// Overrides `render.knn_k` when set.
    pub knn_k: Option<usize>,
    pub render: RenderConfig,
    pub weights: LossWeights,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            iterations: 1000,
            patch_size: 36,
            rates: GroupRates::default(),
            optimizer: AdamWConfig::default(),
            background: BackgroundMode::White,
            seed: 0,
            mode: FitMode::Direct,
            payload: PayloadKind::TriPlane,
            res: 8,
            channels: 8,
            decoder_hidden: 128,
            knn_k: None,
            render: RenderConfig::default(),
            weights: LossWeights::default(),
        }
    }
}

impl FitConfig {
    pub fn payload_res(&self) -> usize {
        match self.payload {
            PayloadKind::TriPlane => self.res,
            PayloadKind::Vector => 1,
        }
    }

    pub fn render_config(&self) -> RenderConfig {
        let mut cfg = self.render.clone();
        if let Some(k) = self.knn_k {
            cfg.knn_k = k;
        }
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        self.render_config().validate()?;
        self.weights.validate()?;
        let r = &self.rates;
        if [r.poses, r.payloads, r.mlp, r.latent, r.decoder].iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::invalid("learning rates must be >= 0"));
        }
        if self.patch_size == 0 || self.res == 0 || self.channels == 0 || self.decoder_hidden == 0 {
            return Err(Error::invalid("patch size, resolution, channels and decoder width must be positive"));
        }
        Ok(())
    }
}

/// An image window of one view.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Patch {
    pub view: usize,
    pub x0: usize,
    pub y0: usize,
    pub size: usize,
}

impl Patch {
    pub fn pixels(&self) -> Vec<(usize, usize)> {
        (self.y0..self.y0 + self.size)
            .flat_map(|y| (self.x0..self.x0 + self.size).map(move |x| (x, y)))
            .collect()
    }
}

/// Uniform over views and over every window of `size` that fits.
pub fn sample_patch<R: Rng + ?Sized>(sizes: &[(usize, usize)], size: usize, rng: &mut R) -> Result<Patch> {
    if sizes.is_empty() {
        return Err(Error::invalid("no views to sample from"));
    }
    if size == 0 || sizes.iter().any(|(w, h)| size > *w || size > *h) {
        return Err(Error::invalid(format!("patch size {size} does not fit every view")));
    }
    let view = rng.random_range(0..sizes.len());
    let (w, h) = sizes[view];
    Ok(Patch {
        view,
        x0: rng.random_range(0..=w - size),
        y0: rng.random_range(0..=h - size),
        size,
    })
}

/// `target·mask + color·(1 − mask)`, per pixel.
pub fn composite_background(target: &[f64], mask: &[f64], color: [f64; 3]) -> Result<Vec<f64>> {
    if target.len() != 3 * mask.len() {
        return Err(Error::invalid(format!(
            "{} color scalars do not match {} mask pixels",
            target.len(),
            mask.len()
        )));
    }
    Ok(target
        .chunks_exact(3)
        .zip(mask)
        .flat_map(|(c, m)| (0..3).map(move |k| c[k] * m + color[k] * (1.0 - m)))
        .collect())
}

/// Supervision for `patch` over background `bg`.
pub fn patch_target(view: &View, patch: &Patch, bg: [f64; 3]) -> Result<PatchTarget> {
    let pixels = patch.pixels();
    let w = view.camera.width;
    let pick3 = |src: &[f64]| -> Vec<f64> {
        pixels
            .iter()
            .flat_map(|(x, y)| {
                let i = 3 * (y * w + x);
                [src[i], src[i + 1], src[i + 2]]
            })
            .collect()
    };
    let pick = |src: &[f64]| -> Vec<f64> { pixels.iter().map(|(x, y)| src[y * w + x]).collect() };
    let mask = view.mask.as_deref().map(pick);
    let mut color = pick3(&view.color);
    if bg != [1.0; 3] {
        let m = mask
            .as_deref()
            .ok_or_else(|| Error::invalid("background augmentation needs a target mask"))?;
        color = composite_background(&color, m, bg)?;
    }
    let depth = view.depth.as_deref().map(pick);
    Ok(PatchTarget {
        pixels,
        color,
        depth,
        mask,
    })
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub avatar: UVAvatar,
    pub mlp: RenderMlp,
    pub decoder: Option<LatentDecoder>,
    /// Loss of every iteration, evaluated before its update.
    pub history: Vec<f64>,
}

/// Initial state for `config`: avatar from anchors, random shading network
/// and, in latent mode, a random decoder.
pub fn initial_state(anchors: &AnchorGrid, config: &FitConfig) -> Result<(UVAvatar, RenderMlp, Option<LatentDecoder>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let res = config.payload_res();
    let avatar = init_from_anchors(anchors, res, config.channels)?;
    let mlp = RenderMlp::init(&mut rng);
    let decoder = match config.mode {
        FitMode::Direct => None,
        FitMode::Latent => Some(LatentDecoder::init(&mut rng, config.decoder_hidden, res, config.channels)?),
    };
    Ok((avatar, mlp, decoder))
}

pub fn fit_scene(views: &[View], anchors: &AnchorGrid, config: &FitConfig) -> Result<FitResult> {
    config.validate()?;
    if views.is_empty() {
        return Err(Error::invalid("fitting needs at least one view"));
    }
    for v in views {
        v.validate()?;
    }
    let sizes: Vec<_> = views.iter().map(|v| (v.camera.width, v.camera.height)).collect();
    if sizes.iter().any(|(w, h)| config.patch_size > *w || config.patch_size > *h) {
        return Err(Error::invalid(format!(
            "patch size {} exceeds a view's image size",
            config.patch_size
        )));
    }
    let (template, mlp, decoder) = initial_state(anchors, config)?;
    let mut params = pack_params(&template, &mlp, decoder.as_ref(), &config.rates)?;
    let mut opt = AdamW::new(config.optimizer.clone(), params.len());
    // Separate stream for patch and background draws.
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x05EE_DF17);
    let base_cfg = config.render_config();
    let mut history = Vec::with_capacity(config.iterations);
    for it in 0..config.iterations {
        let patch = sample_patch(&sizes, config.patch_size, &mut rng)?;
        let bg = match config.background {
            BackgroundMode::White => [1.0; 3],
            BackgroundMode::RandomWhiteBiased => {
                if rng.random_bool(0.5) {
                    [1.0; 3]
                } else {
                    [rng.random(), rng.random(), rng.random()]
                }
            }
        };
        let view = &views[patch.view];
        let target = patch_target(view, &patch, bg)?;
        let mut cfg = base_cfg.clone();
        cfg.background = bg;
        cfg.seed = base_cfg.seed.wrapping_add(it as u64);
        let obj = SceneObjective {
            template: &template,
            decoder: decoder.as_ref(),
            camera: &view.camera,
            target: &target,
            cfg,
            weights: config.weights.clone(),
        };
        let (eval, grad) = obj.loss_and_gradient(&params).map_err(|e| match e {
            Error::NumericFailure { op, detail } => Error::Diverged {
                iteration: it,
                detail: format!("{op}: {detail}"),
            },
            other => other,
        })?;
        history.push(eval.loss);
        opt.step(&mut params, &grad).map_err(|e| Error::Diverged {
            iteration: it,
            detail: e.to_string(),
        })?;
        if it % 100 == 0 {
            log::debug!("iteration {it}: loss {:.6}", eval.loss);
        }
    }
    let (avatar, mlp, decoder, _) = unpack_params(&params, &template, decoder.as_ref())?;
    avatar.validate()?;
    Ok(FitResult {
        avatar,
        mlp,
        decoder,
        history,
    })
}

/// PSNR over the pooled color pixels of every view.
pub fn training_psnr(avatar: &UVAvatar, mlp: &RenderMlp, views: &[View], cfg: &RenderConfig) -> Result<f64> {
    let mut rendered = Vec::new();
    let mut target = Vec::new();
    for v in views {
        v.validate()?;
        rendered.extend(render_image(avatar, mlp, &v.camera, cfg)?.color);
        target.extend_from_slice(&v.color);
    }
    psnr(&rendered, &target)
}

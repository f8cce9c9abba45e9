//! Self-check suites comparing the engine against independent oracles.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diffusion::{cosine_schedule, fold, reverse_sample, unfold, AnalyticGaussDenoiser, TexelTensor};
use crate::error::Result;
use crate::fit::{pack_params, GroupRates, LatentDecoder, PatchTarget, SceneObjective};
use crate::grad::{check_gradients, GroupKind, GroupReport, ParamSet};
use crate::losses::LossWeights;
use crate::model::{init_from_anchors, AnchorGrid, Camera, RenderConfig, UVAvatar, Vec3};
use crate::render::RenderMlp;
use crate::spatial::{brute_force_knn_points, UniformGridIndex};

/// Relative-error bound for the gradient oracle.
pub const GRAD_TOLERANCE: f64 = 1e-4;
pub const GRAD_STEP: f64 = 1e-5;
/// Denominator floor for the relative error.
pub const GRAD_FLOOR: f64 = 1e-6;

fn unit<R: Rng>(rng: &mut R) -> Vec3 {
    loop {
        let v = Vec3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let n = v.norm();
        if n > 0.1 && n <= 1.0 {
            return v / n;
        }
    }
}

/// Small random scene with perturbed poses and random payloads, viewed by a
/// 4x4 camera.
pub struct GradScene {
    pub avatar: UVAvatar,
    pub mlp: RenderMlp,
    pub camera: Camera,
    pub target: PatchTarget,
    pub cfg: RenderConfig,
}

pub fn random_grad_scene(seed: u64, gaussians: usize, res: usize) -> Result<GradScene> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let width = gaussians.div_ceil(2).max(1);
    let height = gaussians.div_ceil(width);
    let n = width * height;
    let grid = AnchorGrid {
        height,
        width,
        positions: (0..n).map(|_| unit(&mut rng) * rng.random_range(0.0..0.25)).collect(),
        normals: (0..n).map(|_| unit(&mut rng)).collect(),
        scales: (0..n).map(|_| rng.random_range(0.12..0.2)).collect(),
    };
    let mut avatar = init_from_anchors(&grid, res, 8)?;
    for p in &mut avatar.poses {
        p.center += unit(&mut rng) * 0.02;
        p.rotation = Vec3::new(
            rng.random_range(-3.0..3.0),
            rng.random_range(-1.4..1.4),
            rng.random_range(-3.0..3.0),
        );
        p.radii = Vec3::new(
            rng.random_range(0.1..0.22),
            rng.random_range(0.1..0.22),
            rng.random_range(0.06..0.15),
        );
    }
    for q in &mut avatar.payloads {
        q.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
    }
    let mut mlp = RenderMlp::init(&mut rng);
    mlp.b2[3] = -1.0;
    let camera = Camera::look_at(Vec3::new(0.3, -0.2, 2.0), Vec3::zeros(), Vec3::y(), 0.35, 4, 4, 1.4, 2.6)?;
    let pixels: Vec<(usize, usize)> = (0..4).flat_map(|y| (0..4).map(move |x| (x, y))).collect();
    let m = pixels.len();
    let target = PatchTarget {
        color: (0..3 * m).map(|_| rng.random_range(0.0..1.0)).collect(),
        depth: Some((0..m).map(|_| rng.random_range(1.8..2.2)).collect()),
        mask: Some((0..m).map(|_| if rng.random_bool(0.7) { 1.0 } else { 0.0 }).collect()),
        pixels,
    };
    let cfg = RenderConfig {
        samples_per_ray: 24,
        seed,
        ..RenderConfig::exact()
    };
    Ok(GradScene {
        avatar,
        mlp,
        camera,
        target,
        cfg,
    })
}

/// Up to `per_group` random indices from every group, in ascending order.
pub fn sample_indices<R: Rng>(params: &ParamSet, per_group: usize, rng: &mut R) -> Vec<usize> {
    let mut out = Vec::new();
    for g in &params.groups {
        let mut idx: Vec<usize> = (g.offset..g.offset + g.len).collect();
        idx.shuffle(rng);
        idx.truncate(per_group);
        idx.sort_unstable();
        out.extend(idx);
    }
    out
}

#[derive(Debug, Clone)]
pub struct GradCheckOutcome {
    pub mode: &'static str,
    pub groups: Vec<GroupReport>,
}

impl GradCheckOutcome {
    pub fn passed(&self) -> bool {
        self.groups
            .iter()
            .all(|g| g.checked > 0 && g.max_abs_gradient > 0.0 && g.max_rel_error < GRAD_TOLERANCE)
    }
}

/// Full loss gradient against central differences on a random 8-Gaussian
/// scene, in direct and latent payload modes.
pub fn grad_check(seed: u64, per_group: usize) -> Result<Vec<GradCheckOutcome>> {
    let scene = random_grad_scene(seed, 8, 4)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA5A5);
    let weights = LossWeights::default();
    let rates = GroupRates::default();
    let mut outcomes = Vec::new();

    let decoder = {
        let mut d = LatentDecoder::init(&mut rng, 8, 2, 8)?;
        d.z.iter_mut().for_each(|v| *v *= 50.0);
        d.w3.iter_mut().for_each(|v| *v *= 10.0);
        d
    };
    let mut latent_template = scene.avatar.clone();
    latent_template.payloads = decoder.decode_payloads(scene.avatar.height, scene.avatar.width)?;

    for (mode, template, dec) in [
        ("direct", &scene.avatar, None),
        ("latent", &latent_template, Some(&decoder)),
    ] {
        let params = pack_params(template, &scene.mlp, dec, &rates)?;
        let obj = SceneObjective {
            template,
            decoder: dec,
            camera: &scene.camera,
            target: &scene.target,
            cfg: scene.cfg.clone(),
            weights: weights.clone(),
        };
        let mut idx = sample_indices(&params, per_group, &mut rng);
        // Every pose scalar is checked.
        let poses = params.group_info(GroupKind::Poses).expect("pose group").clone();
        idx.retain(|i| !(poses.offset..poses.offset + poses.len).contains(i));
        idx.extend(poses.offset..poses.offset + poses.len);
        idx.sort_unstable();
        let groups = check_gradients(&obj, &params, GRAD_STEP, &idx, GRAD_FLOOR)?;
        outcomes.push(GradCheckOutcome { mode, groups });
    }
    Ok(outcomes)
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnnCheckOutcome {
    pub queries: usize,
    pub mismatches: usize,
}

/// Grid index against exhaustive search over `n` centers, with duplicated
/// centers to exercise the tie rule.
pub fn knn_check(seed: u64, n: usize, queries: usize, k: usize) -> Result<KnnCheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers: Vec<Vec3> = (0..n)
        .map(|_| {
            // Points on a unit sphere quantized to 1/64 so exact ties occur.
            let v = unit(&mut rng) * 0.12;
            v.map(|c| (c * 64.0).round() / 64.0)
        })
        .collect();
    for i in (0..n).step_by(17) {
        let j = (i * 7 + 3) % n;
        centers[j] = centers[i];
    }
    let cell = crate::spatial::suggested_cell_size(&centers);
    let index = UniformGridIndex::build(&centers, cell)?;
    let mut mismatches = 0;
    for q in 0..queries {
        let x = if q % 5 == 0 {
            centers[rng.random_range(0..n)]
        } else {
            Vec3::new(
                rng.random_range(-0.2..0.2),
                rng.random_range(-0.2..0.2),
                rng.random_range(-0.2..0.2),
            )
        };
        if index.knn(&x, k)? != brute_force_knn_points(&centers, &x, k)? {
            mismatches += 1;
        }
    }
    Ok(KnnCheckOutcome { queries, mismatches })
}

/// Bound on schedule identities.
pub const DIFFUSION_TOLERANCE: f64 = 1e-12;
pub const SAMPLER_MEAN: f64 = 0.3;
pub const SAMPLER_STD: f64 = 0.2;
pub const SAMPLER_MEAN_TOLERANCE: f64 = 0.01;
/// Relative bound on the sampled standard deviation.
pub const SAMPLER_STD_TOLERANCE: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionCheckOutcome {
    /// Largest `|α_t² + σ_t² − 1|` of the 1000-step schedule.
    pub vp_error: f64,
    /// Largest violation of the transition identities over all `s <= t` of
    /// the 50-step schedule.
    pub transition_error: f64,
    pub sampler_mean: f64,
    pub sampler_std: f64,
    pub fold_round_trip: bool,
}

impl DiffusionCheckOutcome {
    pub fn passed(&self) -> bool {
        self.vp_error < DIFFUSION_TOLERANCE
            && self.transition_error < DIFFUSION_TOLERANCE
            && (self.sampler_mean - SAMPLER_MEAN).abs() <= SAMPLER_MEAN_TOLERANCE
            && (self.sampler_std / SAMPLER_STD - 1.0).abs() <= SAMPLER_STD_TOLERANCE
            && self.fold_round_trip
    }
}

/// Schedule identities, a 200-step sampler run over `chains` scalar chains
/// of `N(0.3, 0.2²)` data, and a fold/unfold round trip.
pub fn diffusion_check(seed: u64, chains: usize) -> Result<DiffusionCheckOutcome> {
    let long = cosine_schedule(1000)?;
    let vp_error = (0..=1000)
        .map(|t| (long.alpha(t).powi(2) + long.sigma(t).powi(2) - 1.0).abs())
        .fold(0.0, f64::max);

    let short = cosine_schedule(50)?;
    let mut transition_error: f64 = 0.0;
    for t in 0..=50 {
        for s in 0..=t {
            let (a, sg) = short.transition_params(s, t)?;
            transition_error = transition_error
                .max((a * short.alpha(s) - short.alpha(t)).abs())
                .max((sg * sg + a * a * short.sigma(s).powi(2) - short.sigma(t).powi(2)).abs());
        }
    }

    let sched = cosine_schedule(200)?;
    let denoiser = AnalyticGaussDenoiser::new(SAMPLER_MEAN, SAMPLER_STD)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let out = reverse_sample(&sched, &denoiser, (1, chains, 1), &mut rng, 200)?;
    let n = out.data.len() as f64;
    let sampler_mean = out.data.iter().sum::<f64>() / n;
    let sampler_std = (out.data.iter().map(|x| (x - sampler_mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();

    let texels = TexelTensor {
        height: 3,
        width: 4,
        res: 4,
        channels: 2,
        data: (0..3 * 4 * (9 + 3 * 16 * 2)).map(|_| rng.random_range(-1.0..1.0)).collect(),
    };
    let fold_round_trip = fold(&unfold(&texels)?, 4)? == texels;

    Ok(DiffusionCheckOutcome {
        vp_error,
        transition_error,
        sampler_mean,
        sampler_std,
        fold_round_trip,
    })
}

//! Reconstruction and regularization terms.
//!
//! Terms are generic over [`Real`] so the same code evaluates plain `f64`
//! losses and records them on a [`Tape`](crate::grad::Tape). Pose slices use
//! the flat per-texel layout `[center(3), rotation(3), radii(3)]`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grad::Real;
use crate::model::{RenderConfig, UVAvatar, Vec3, POSE_DIM};
use crate::spatial::UniformGridIndex;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub depth: f64,
    /// Identity loss weight. Must be 0: no identity network ships with the crate.
    pub id: f64,
    pub coverage: f64,
    pub silhouette: f64,
    pub volume: f64,
    pub tv: f64,
    pub mesh: f64,
    pub code: f64,
    /// Standard deviation of the latent code prior.
    pub code_sigma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            depth: 0.1,
            id: 0.0,
            coverage: 0.001,
            silhouette: 1.0,
            volume: 1.0,
            tv: 0.1,
            mesh: 0.01,
            code: 1e-4,
            code_sigma: 1.0,
        }
    }
}

impl LossWeights {
    pub fn zeros() -> Self {
        LossWeights {
            depth: 0.0,
            id: 0.0,
            coverage: 0.0,
            silhouette: 0.0,
            volume: 0.0,
            tv: 0.0,
            mesh: 0.0,
            code: 0.0,
            code_sigma: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.depth,
            self.id,
            self.coverage,
            self.silhouette,
            self.volume,
            self.tv,
            self.mesh,
            self.code,
        ];
        if all.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::invalid("loss weights must be finite and >= 0"));
        }
        if self.id != 0.0 {
            return Err(Error::invalid("identity loss is unavailable; set its weight to 0"));
        }
        if !(self.code_sigma > 0.0) {
            return Err(Error::invalid("code prior sigma must be > 0"));
        }
        Ok(())
    }
}

fn same_len(a: usize, b: usize, what: &str) -> Result<()> {
    if a != b {
        return Err(Error::invalid(format!("{what}: length {a} vs {b}")));
    }
    if a == 0 {
        return Err(Error::invalid(format!("{what}: empty input")));
    }
    Ok(())
}

/// Mean absolute difference, optionally weighted per scalar.
pub fn l1_loss<R: Real>(image: &[R], target: &[f64], weight: Option<&[f64]>) -> Result<R> {
    same_len(image.len(), target.len(), "l1 loss")?;
    if let Some(w) = weight {
        same_len(w.len(), target.len(), "l1 weight")?;
    }
    let diffs: Vec<R> = image
        .iter()
        .zip(target)
        .enumerate()
        .map(|(i, (x, t))| {
            let d = (*x - *t).abs();
            match weight {
                Some(w) => d * w[i],
                None => d,
            }
        })
        .collect();
    Ok(R::sum(&diffs) / image.len() as f64)
}

/// Mean squared depth error over pixels whose target alpha exceeds 0.5.
/// The flag is set when no pixel qualifies; the loss is then zero.
pub fn depth_loss<R: Real>(depth: &[R], target: &[f64], target_alpha: &[f64]) -> Result<(R, bool)> {
    same_len(depth.len(), target.len(), "depth loss")?;
    same_len(depth.len(), target_alpha.len(), "depth mask")?;
    let sq: Vec<R> = depth
        .iter()
        .zip(target)
        .zip(target_alpha)
        .filter(|(_, m)| **m > 0.5)
        .map(|((d, t), _)| (*d - *t).square())
        .collect();
    if sq.is_empty() {
        return Ok((depth[0].lift(0.0), true));
    }
    let n = sq.len() as f64;
    Ok((R::sum(&sq) / n, false))
}

/// `λ · mean((alpha − mask)²)`.
pub fn silhouette_loss<R: Real>(alpha: &[R], mask: &[f64], lambda: f64) -> Result<R> {
    same_len(alpha.len(), mask.len(), "silhouette loss")?;
    let sq: Vec<R> = alpha.iter().zip(mask).map(|(a, m)| (*a - *m).square()).collect();
    Ok(R::sum(&sq) * (lambda / alpha.len() as f64))
}

/// `λ · mean over points of (1/K) Σ_k g_k` from precomputed influences,
/// `K` values per point.
pub fn coverage_from_influences<R: Real>(g: &[R], k: usize, lambda: f64) -> Result<R> {
    if k == 0 || g.is_empty() || !g.len().is_multiple_of(k) {
        return Err(Error::invalid(format!(
            "coverage needs a non-empty multiple of K = {k} influences, got {}",
            g.len()
        )));
    }
    let points = (g.len() / k) as f64;
    Ok(R::sum(g) * (lambda / (points * k as f64)))
}

/// Coverage regularizer at arbitrary points using the K nearest Gaussians.
pub fn coverage_loss(
    avatar: &UVAvatar,
    index: &UniformGridIndex,
    points: &[Vec3],
    cfg: &RenderConfig,
    lambda: f64,
) -> Result<f64> {
    cfg.validate()?;
    let mut g = Vec::with_capacity(points.len() * cfg.knn_k);
    for x in points {
        for n in index.knn(x, cfg.knn_k)? {
            let pose = &avatar.poses[n.index];
            g.push(crate::model::rbf_influence(pose, x, cfg.eta, cfg.tau)?);
        }
    }
    coverage_from_influences(&g, cfg.knn_k, lambda)
}

fn check_poses<R>(poses: &[R]) -> Result<usize> {
    if poses.is_empty() || !poses.len().is_multiple_of(POSE_DIM) {
        return Err(Error::invalid(format!(
            "pose slice length {} is not a positive multiple of {POSE_DIM}",
            poses.len()
        )));
    }
    Ok(poses.len() / POSE_DIM)
}

/// `λ · mean over texels of (4π/3)·r₁r₂r₃`.
pub fn volume_term<R: Real>(poses: &[R], lambda: f64) -> Result<R> {
    let n = check_poses(poses)?;
    let vols: Vec<R> = poses
        .chunks_exact(POSE_DIM)
        .map(|p| p[6] * p[7] * p[8])
        .collect();
    Ok(R::sum(&vols) * (lambda * 4.0 * PI / 3.0 / n as f64))
}

/// `λ/N · Σ |G[h+1,w] − G[h,w]| + |G[h,w+1] − G[h,w]|` over all nine pose
/// channels, forward differences without wraparound.
pub fn tv_term<R: Real>(poses: &[R], height: usize, width: usize, lambda: f64) -> Result<R> {
    let n = check_poses(poses)?;
    if n != height * width {
        return Err(Error::invalid(format!("{n} poses do not fill a {height}x{width} grid")));
    }
    let at = |h: usize, w: usize, c: usize| poses[(h * width + w) * POSE_DIM + c];
    let mut terms = Vec::new();
    for h in 0..height {
        for w in 0..width {
            for c in 0..POSE_DIM {
                if h + 1 < height {
                    terms.push((at(h + 1, w, c) - at(h, w, c)).abs());
                }
                if w + 1 < width {
                    terms.push((at(h, w + 1, c) - at(h, w, c)).abs());
                }
            }
        }
    }
    if terms.is_empty() {
        return Ok(poses[0].lift(0.0));
    }
    Ok(R::sum(&terms) * (lambda / n as f64))
}

/// `λ/N · Σ ‖v − μ‖²`.
pub fn mesh_term<R: Real>(poses: &[R], anchors: &[Vec3], lambda: f64) -> Result<R> {
    let n = check_poses(poses)?;
    same_len(n, anchors.len(), "mesh loss anchors")?;
    let sq: Vec<R> = poses
        .chunks_exact(POSE_DIM)
        .zip(anchors)
        .flat_map(|(p, v)| (0..3).map(move |a| (p[a] - v[a]).square()))
        .collect();
    Ok(R::sum(&sq) * (lambda / n as f64))
}

/// `λ · ‖z‖² / σ²`.
pub fn code_loss<R: Real>(z: &[R], lambda: f64, sigma: f64) -> Result<R> {
    if z.is_empty() {
        return Err(Error::invalid("latent code is empty"));
    }
    let sq: Vec<R> = z.iter().map(|v| v.square()).collect();
    Ok(R::sum(&sq) * (lambda / (sigma * sigma)))
}

fn flat_poses(avatar: &UVAvatar) -> Vec<f64> {
    avatar.poses.iter().flat_map(|p| p.to_array()).collect()
}

pub fn volume_loss(avatar: &UVAvatar, lambda: f64) -> Result<f64> {
    volume_term(&flat_poses(avatar), lambda)
}

pub fn tv_loss(avatar: &UVAvatar, lambda: f64) -> Result<f64> {
    tv_term(&flat_poses(avatar), avatar.height, avatar.width, lambda)
}

pub fn mesh_loss(avatar: &UVAvatar, lambda: f64) -> Result<f64> {
    mesh_term(&flat_poses(avatar), &avatar.anchors, lambda)
}

/// Everything the total loss reads. Image slices are flattened over the
/// supervised pixels (`color` holds three scalars per pixel).
pub struct LossInputs<'a, R> {
    pub color: &'a [R],
    pub depth: &'a [R],
    pub alpha: &'a [R],
    pub target_color: &'a [f64],
    pub target_depth: Option<&'a [f64]>,
    pub target_mask: &'a [f64],
    /// Optional per-scalar weight on the color L1 term.
    pub pixel_weight: Option<&'a [f64]>,
    /// Unweighted coverage value: mean over points of the mean K influences.
    pub coverage: Option<R>,
    pub poses: &'a [R],
    pub anchors: &'a [Vec3],
    pub height: usize,
    pub width: usize,
    pub z: Option<&'a [R]>,
}

/// Weighted contributions; `total` is their sum.
#[derive(Debug, Clone, Copy)]
pub struct LossBreakdown<R> {
    pub l1: R,
    pub depth: R,
    pub silhouette: R,
    pub coverage: R,
    pub volume: R,
    pub tv: R,
    pub mesh: R,
    pub code: R,
    pub total: R,
    pub depth_mask_empty: bool,
}

impl<R: Real> LossBreakdown<R> {
    pub fn terms(&self) -> [(&'static str, f64); 8] {
        [
            ("l1", self.l1.value()),
            ("depth", self.depth.value()),
            ("silhouette", self.silhouette.value()),
            ("coverage", self.coverage.value()),
            ("volume", self.volume.value()),
            ("tv", self.tv.value()),
            ("mesh", self.mesh.value()),
            ("code", self.code.value()),
        ]
    }
}

pub fn total_loss<R: Real>(inp: &LossInputs<'_, R>, w: &LossWeights) -> Result<LossBreakdown<R>> {
    w.validate()?;
    let l1 = l1_loss(inp.color, inp.target_color, inp.pixel_weight)?;
    let zero = l1.lift(0.0);
    let (depth, depth_mask_empty) = match inp.target_depth {
        Some(td) => {
            let (d, empty) = depth_loss(inp.depth, td, inp.target_mask)?;
            (d * w.depth, empty)
        }
        None => (zero, true),
    };
    let silhouette = silhouette_loss(inp.alpha, inp.target_mask, w.silhouette)?;
    let coverage = inp.coverage.map_or(zero, |c| c * w.coverage);
    let volume = volume_term(inp.poses, w.volume)?;
    let tv = tv_term(inp.poses, inp.height, inp.width, w.tv)?;
    let mesh = mesh_term(inp.poses, inp.anchors, w.mesh)?;
    let code = match inp.z {
        Some(z) => code_loss(z, w.code, w.code_sigma)?,
        None => zero,
    };
    let total = R::sum(&[l1, depth, silhouette, coverage, volume, tv, mesh, code]);
    Ok(LossBreakdown {
        l1,
        depth,
        silhouette,
        coverage,
        volume,
        tv,
        mesh,
        code,
        total,
        depth_mask_empty,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grad::{finite_diff, GroupKind, ParamSet, TapeObjective, Var};
    use approx::assert_abs_diff_eq;

    #[test]
    fn l1_examples() {
        assert_eq!(l1_loss(&[0.2, 0.7], &[0.2, 0.7], None).unwrap(), 0.0);
        assert_eq!(l1_loss(&[0.0; 6], &[1.0; 6], None).unwrap(), 1.0);
        assert_eq!(l1_loss(&[0.5, 0.5, 0.0, 0.0], &[0.0, 0.0, 0.0, 0.0], None).unwrap(), 0.25);
        assert!(l1_loss(&[0.0], &[0.0, 1.0], None).is_err());
    }

    #[test]
    fn depth_examples() {
        let m = [1.0, 1.0, 0.0];
        assert_eq!(depth_loss(&[1.0, 2.0, 9.0], &[1.0, 2.0, 0.0], &m).unwrap(), (0.0, false));
        let (v, _) = depth_loss(&[1.3, 2.3, 7.0], &[1.0, 2.0, 0.0], &m).unwrap();
        assert_abs_diff_eq!(v, 0.09, epsilon = 1e-12);
        assert_eq!(depth_loss(&[1.0], &[5.0], &[0.2]).unwrap(), (0.0, true));
    }

    #[test]
    fn silhouette_examples() {
        assert_eq!(silhouette_loss(&[0.3, 1.0], &[0.3, 1.0], 1.0).unwrap(), 0.0);
        assert_eq!(silhouette_loss(&[1.0; 4], &[0.0; 4], 1.0).unwrap(), 1.0);
        assert_eq!(silhouette_loss(&[1.0; 4], &[0.0; 4], 0.0).unwrap(), 0.0);
    }

    #[test]
    fn coverage_arithmetic() {
        let v = coverage_from_influences(&[0.1, 0.2, 0.3], 3, 0.001).unwrap();
        assert_abs_diff_eq!(v, 2e-4, epsilon = 1e-15);
    }

    #[test]
    fn coverage_from_points_scales_with_eta() {
        use crate::model::{init_from_anchors, AnchorGrid};
        let g = AnchorGrid {
            height: 1,
            width: 3,
            positions: vec![Vec3::zeros(), Vec3::x(), Vec3::y()],
            normals: vec![Vec3::z(); 3],
            scales: vec![0.5; 3],
        };
        let a = init_from_anchors(&g, 2, 8).unwrap();
        let idx = UniformGridIndex::build(&a.centers(), 1.0).unwrap();
        let pts = [Vec3::new(0.2, 0.1, 0.0), Vec3::new(0.5, 0.5, 0.1)];
        let cfg = RenderConfig::default();
        let base = coverage_loss(&a, &idx, &pts, &cfg, 0.001).unwrap();
        let doubled = RenderConfig {
            eta: 10.0,
            ..cfg.clone()
        };
        assert_abs_diff_eq!(coverage_loss(&a, &idx, &pts, &doubled, 0.001).unwrap(), 2.0 * base, epsilon = 1e-15);
        let far = coverage_loss(&a, &idx, &[Vec3::repeat(100.0)], &cfg, 0.001).unwrap();
        assert!(far < 1e-300);
    }

    fn pose(center: [f64; 3], radii: [f64; 3]) -> Vec<f64> {
        let mut p = center.to_vec();
        p.extend([0.0; 3]);
        p.extend(radii);
        p
    }

    #[test]
    fn volume_examples() {
        assert_abs_diff_eq!(
            volume_term(&pose([0.0; 3], [1.0; 3]), 1.0).unwrap(),
            4.0 * PI / 3.0,
            epsilon = 1e-14
        );
        assert_eq!(volume_term(&pose([0.0; 3], [0.0; 3]), 1.0).unwrap(), 0.0);
        let a = volume_term(&pose([0.0; 3], [0.3, 0.2, 0.1]), 1.0).unwrap();
        let b = volume_term(&pose([0.0; 3], [0.6, 0.2, 0.1]), 1.0).unwrap();
        assert_abs_diff_eq!(b, 2.0 * a, epsilon = 1e-15);
    }

    #[test]
    fn tv_examples() {
        let mut p = pose([0.0; 3], [0.1; 3]);
        p.extend(pose([1.0, 0.0, 0.0], [0.1; 3]));
        assert_abs_diff_eq!(tv_term(&p, 2, 1, 0.1).unwrap(), 0.05, epsilon = 1e-15);
        let c: Vec<f64> = (0..4).flat_map(|_| pose([0.3, 0.1, 0.2], [0.1; 3])).collect();
        assert_eq!(tv_term(&c, 2, 2, 0.1).unwrap(), 0.0);
        // Rows constant along w: swapping the two rows keeps every horizontal
        // term at zero and leaves the vertical total unchanged.
        let row = |x: f64| -> Vec<f64> { (0..3).flat_map(|_| pose([x, 0.0, 0.0], [0.1; 3])).collect() };
        let mut a = row(0.0);
        a.extend(row(2.0));
        let mut b = row(2.0);
        b.extend(row(0.0));
        assert_eq!(tv_term(&a, 2, 3, 1.0).unwrap(), tv_term(&b, 2, 3, 1.0).unwrap());
    }

    #[test]
    fn mesh_examples() {
        let anchors = vec![Vec3::zeros(), Vec3::x()];
        let mut p = pose([0.0; 3], [0.1; 3]);
        p.extend(pose([1.0, 0.0, 0.0], [0.1; 3]));
        assert_eq!(mesh_term(&p, &anchors, 0.01).unwrap(), 0.0);
        let mut q = pose([0.1, 0.0, 0.0], [0.1; 3]);
        q.extend(pose([1.1, 0.0, 0.0], [0.1; 3]));
        assert_abs_diff_eq!(mesh_term(&q, &anchors, 0.01).unwrap(), 1e-4, epsilon = 1e-15);
        let mut r = pose([0.0; 3], [0.1; 3]);
        r.extend(pose([1.0, 0.5, 0.0], [0.1; 3]));
        assert_abs_diff_eq!(mesh_term(&r, &anchors, 0.01).unwrap(), 0.01 * 0.25 / 2.0, epsilon = 1e-15);
    }

    #[test]
    fn code_examples() {
        assert_eq!(code_loss(&[0.0; 512], 1e-4, 1.0).unwrap(), 0.0);
        let mut z = vec![0.0; 512];
        z[7] = 1.0;
        assert_abs_diff_eq!(code_loss(&z, 1e-4, 1.0).unwrap(), 1e-4, epsilon = 1e-18);
        let z2: Vec<f64> = z.iter().map(|v| v * 2.0).collect();
        assert_abs_diff_eq!(code_loss(&z2, 1e-4, 1.0).unwrap(), 4e-4, epsilon = 1e-18);
    }

    struct Fixture {
        color: Vec<f64>,
        depth: Vec<f64>,
        alpha: Vec<f64>,
        tc: Vec<f64>,
        td: Vec<f64>,
        tm: Vec<f64>,
        poses: Vec<f64>,
        anchors: Vec<Vec3>,
        z: Vec<f64>,
    }

    fn fixture() -> Fixture {
        let mut poses = pose([0.1, 0.0, 0.2], [0.1, 0.2, 0.05]);
        poses.extend(pose([0.5, 0.1, 0.0], [0.2, 0.1, 0.1]));
        Fixture {
            color: vec![0.2, 0.4, 0.6, 0.9, 0.1, 0.3],
            depth: vec![1.1, 2.3],
            alpha: vec![0.8, 0.3],
            tc: vec![0.25, 0.35, 0.7, 0.8, 0.2, 0.33],
            td: vec![1.0, 2.0],
            tm: vec![1.0, 0.0],
            poses,
            anchors: vec![Vec3::new(0.0, 0.0, 0.2), Vec3::new(0.5, 0.0, 0.0)],
            z: vec![0.3, -0.2, 0.1],
        }
    }

    fn inputs(f: &Fixture) -> LossInputs<'_, f64> {
        LossInputs {
            color: &f.color,
            depth: &f.depth,
            alpha: &f.alpha,
            target_color: &f.tc,
            target_depth: Some(&f.td),
            target_mask: &f.tm,
            pixel_weight: None,
            coverage: Some(0.7),
            poses: &f.poses,
            anchors: &f.anchors,
            height: 1,
            width: 2,
            z: Some(&f.z),
        }
    }

    #[test]
    fn breakdown_sums_to_total() {
        let f = fixture();
        let b = total_loss(&inputs(&f), &LossWeights::default()).unwrap();
        let s: f64 = b.terms().iter().map(|t| t.1).sum();
        assert_abs_diff_eq!(s, b.total, epsilon = 1e-12);
        assert!(b.terms().iter().all(|t| t.1 >= 0.0 && t.1 <= b.total));
    }

    #[test]
    fn zero_weights_leave_l1() {
        let f = fixture();
        let b = total_loss(&inputs(&f), &LossWeights::zeros()).unwrap();
        assert_eq!(b.total, l1_loss(&f.color, &f.tc, None).unwrap());
    }

    #[test]
    fn perfect_reconstruction_is_zero() {
        let f = fixture();
        let poses: Vec<f64> = f
            .anchors
            .iter()
            .flat_map(|a| pose([a.x, a.y, a.z], [0.0; 3]))
            .collect();
        let z = vec![0.0; 3];
        let mut inp = inputs(&f);
        inp.color = &f.tc;
        inp.depth = &f.td;
        inp.alpha = &f.tm;
        inp.coverage = Some(0.0);
        inp.poses = &poses;
        inp.z = Some(&z);
        // Single-texel grid.
        inp.poses = &poses[..POSE_DIM];
        inp.anchors = &f.anchors[..1];
        inp.width = 1;
        let b = total_loss(&inp, &LossWeights::default()).unwrap();
        assert_eq!(b.total, 0.0);
    }

    #[test]
    fn each_term_linear_in_weight() {
        let f = fixture();
        let w = LossWeights::default();
        let mut w3 = w.clone();
        w3.depth *= 3.0;
        w3.coverage *= 3.0;
        w3.silhouette *= 3.0;
        w3.volume *= 3.0;
        w3.tv *= 3.0;
        w3.mesh *= 3.0;
        w3.code *= 3.0;
        let a = total_loss(&inputs(&f), &w).unwrap();
        let b = total_loss(&inputs(&f), &w3).unwrap();
        for (x, y) in a.terms().iter().zip(b.terms()).skip(1) {
            assert_abs_diff_eq!(y.1, 3.0 * x.1, epsilon = 1e-15);
        }
    }

    #[test]
    fn identity_weight_rejected() {
        let f = fixture();
        let w = LossWeights {
            id: 0.1,
            ..Default::default()
        };
        assert!(total_loss(&inputs(&f), &w).is_err());
    }

    #[test]
    fn total_loss_matches_finite_differences() {
        let f = fixture();
        let mut params = ParamSet::new();
        params.push_group(GroupKind::Payloads, &f.color, 1.0).unwrap();
        params.push_group(GroupKind::Mlp, &f.depth, 1.0).unwrap();
        params.push_group(GroupKind::Decoder, &f.alpha, 1.0).unwrap();
        params.push_group(GroupKind::Poses, &f.poses, 1.0).unwrap();
        params.push_group(GroupKind::Latent, &f.z, 1.0).unwrap();
        let (tc, td, tm, anchors) = (f.tc.clone(), f.td.clone(), f.tm.clone(), f.anchors.clone());
        let obj = TapeObjective::new(move |x: &[Var]| {
            let inp = LossInputs {
                color: &x[0..6],
                depth: &x[6..8],
                alpha: &x[8..10],
                target_color: &tc,
                target_depth: Some(&td),
                target_mask: &tm,
                pixel_weight: None,
                coverage: Some(x[0] * 0.5),
                poses: &x[10..28],
                anchors: &anchors,
                height: 1,
                width: 2,
                z: Some(&x[28..31]),
            };
            total_loss(&inp, &LossWeights::default()).unwrap().total
        });
        let idx: Vec<usize> = (0..params.len()).collect();
        let r = crate::grad::check_gradients(&obj, &params, 1e-5, &idx, 1e-6).unwrap();
        for g in r {
            assert!(g.max_rel_error < 1e-6, "{g:?}");
        }
        let fd = finite_diff(&obj, &params, 1e-5, &idx).unwrap();
        // Equal rotation channels put TV on its kink.
        assert!(fd.iter().filter(|e| e.excluded).count() >= 3);
    }
}

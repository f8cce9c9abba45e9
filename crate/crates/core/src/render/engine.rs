//! Ray marching over K-nearest blended Gaussians, with an optional record of
//! every non-empty sample so the pass can be reversed.

use std::hash::{Hash, Hasher};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{Camera, FramePoint, LocalFrame, Ray, RenderConfig, UVAvatar, Vec3, POSE_DIM};
use crate::spatial::{suggested_cell_size, Neighbor, UniformGridIndex};

use super::mlp::{MlpEval, RenderMlp, MLP_IN, MLP_PARAMS};
use super::triplane::{plane_cells, sample_backward, sample_with_cells, PlaneCell};

/// Upper bound on blended per-sample opacity; keeps transmittance positive.
pub const ALPHA_MAX: f64 = 1.0 - 1e-4;

/// One Gaussian's contribution at a sample point.
#[derive(Debug, Clone)]
pub struct NeighborRec {
    pub texel: u32,
    /// `x − μ`.
    pub d: Vec3,
    pub pt: FramePoint,
    pub cells: [PlaneCell; 3],
    pub feature: [f64; MLP_IN],
    pub mlp: MlpEval,
}

impl NeighborRec {
    pub fn color(&self) -> [f64; 3] {
        [self.mlp.out[0], self.mlp.out[1], self.mlp.out[2]]
    }

    pub fn opacity(&self) -> f64 {
        self.mlp.out[3]
    }
}

/// Blended color and opacity at one point.
#[derive(Debug, Clone)]
pub struct SampleRec {
    pub t: f64,
    pub alpha: f64,
    pub clamped: bool,
    pub color: [f64; 3],
    pub neighbors: Vec<NeighborRec>,
}

#[derive(Debug, Clone, Default)]
pub struct RayRecord {
    pub samples: Vec<SampleRec>,
    /// Samples visited before early termination (empty ones included).
    pub visited: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayOutput {
    pub color: [f64; 3],
    pub depth: f64,
    pub alpha: f64,
}

/// Adjoints of one ray's outputs.
#[derive(Debug, Clone, Copy, Default)]
pub struct RayAdjoint {
    pub color: [f64; 3],
    pub depth: f64,
    pub alpha: f64,
}

/// Gradient buffers over the scene's differentiable inputs.
#[derive(Debug, Clone)]
pub struct SceneGrads {
    pub poses: Vec<f64>,
    pub payloads: Vec<f64>,
    pub mlp: Vec<f64>,
}

impl SceneGrads {
    pub fn zeros(avatar: &UVAvatar) -> Self {
        let p = avatar.payloads.first().map_or(0, |p| p.len());
        SceneGrads {
            poses: vec![0.0; avatar.len() * POSE_DIM],
            payloads: vec![0.0; avatar.len() * p],
            mlp: vec![0.0; MLP_PARAMS],
        }
    }
}

/// Composites depth-ordered `(t, α, color)` samples front to back over `bg`.
pub fn composite(samples: &[(f64, f64, [f64; 3])], bg: &[f64; 3]) -> RayOutput {
    let mut trans = 1.0;
    let mut color = [0.0; 3];
    let mut depth = 0.0;
    let mut alpha = 0.0;
    for (t, a, c) in samples {
        let w = trans * a;
        for k in 0..3 {
            color[k] += w * c[k];
        }
        depth += w * t;
        alpha += w;
        trans *= 1.0 - a;
    }
    for k in 0..3 {
        color[k] += (1.0 - alpha) * bg[k];
    }
    RayOutput {
        color,
        depth,
        alpha,
    }
}

/// Per-sample `(α adjoint, color adjoint)` for [`composite`].
pub fn composite_backward(
    samples: &[(f64, f64, [f64; 3])],
    bg: &[f64; 3],
    adj: &RayAdjoint,
) -> Vec<(f64, [f64; 3])> {
    let n = samples.len();
    let mut trans = Vec::with_capacity(n);
    let mut t = 1.0;
    for s in samples {
        trans.push(t);
        t *= 1.0 - s.1;
    }
    // v_j: sensitivity of the loss to the sample's weight w_j = T_j α_j.
    let v: Vec<f64> = samples
        .iter()
        .map(|(tj, _, c)| {
            (0..3).map(|k| adj.color[k] * (c[k] - bg[k])).sum::<f64>() + adj.depth * tj + adj.alpha
        })
        .collect();
    let mut out = vec![(0.0, [0.0; 3]); n];
    let mut suffix = 0.0;
    for j in (0..n).rev() {
        let a = samples[j].1;
        let w = trans[j] * a;
        let a_bar = trans[j] * v[j] - suffix / (1.0 - a);
        out[j] = (a_bar, adj.color.map(|c| c * w));
        suffix += w * v[j];
    }
    out
}

/// Blends K neighbor evaluations: normalized influence for color, raw
/// influence for opacity. Returns `(color, alpha, clamped)`.
fn blend(neighbors: &[NeighborRec], epsilon: f64) -> ([f64; 3], f64, bool) {
    let gsum: f64 = neighbors.iter().map(|n| n.pt.g).sum();
    let z = gsum + epsilon;
    let mut color = [0.0; 3];
    let mut alpha = 0.0;
    for n in neighbors {
        let w = n.pt.g / z;
        let c = n.color();
        for k in 0..3 {
            color[k] += w * c[k];
        }
        alpha += n.pt.g * n.opacity();
    }
    if alpha > ALPHA_MAX {
        (color, ALPHA_MAX, true)
    } else {
        (color, alpha.max(0.0), false)
    }
}

/// Immutable render context: per-Gaussian frames and the KNN index.
pub struct Scene<'a> {
    pub avatar: &'a UVAvatar,
    pub mlp: &'a RenderMlp,
    pub cfg: RenderConfig,
    frames: Vec<LocalFrame>,
    index: UniformGridIndex,
    lo: Vec3,
    hi: Vec3,
}

impl<'a> Scene<'a> {
    pub fn new(avatar: &'a UVAvatar, mlp: &'a RenderMlp, cfg: &RenderConfig) -> Result<Self> {
        let cell = suggested_cell_size(&avatar.centers());
        Self::with_cell_size(avatar, mlp, cfg, cell)
    }

    pub fn with_cell_size(
        avatar: &'a UVAvatar,
        mlp: &'a RenderMlp,
        cfg: &RenderConfig,
        cell_size: f64,
    ) -> Result<Self> {
        cfg.validate()?;
        avatar.validate()?;
        mlp.validate()?;
        if avatar.channels() < MLP_IN {
            return Err(Error::invalid(format!(
                "payloads need at least {MLP_IN} channels to feed the shading network, got {}",
                avatar.channels()
            )));
        }
        if cfg.knn_k > avatar.len() {
            return Err(Error::invalid(format!(
                "knn_k = {} exceeds the {} Gaussians",
                cfg.knn_k,
                avatar.len()
            )));
        }
        let frames = avatar
            .poses
            .iter()
            .map(LocalFrame::new)
            .collect::<Result<Vec<_>>>()?;
        let index = UniformGridIndex::build(&avatar.centers(), cell_size)?;
        // Beyond `reach` from every center all influences are below the floor.
        let r_max = avatar
            .poses
            .iter()
            .flat_map(|p| p.radii.iter().copied())
            .fold(0.0, f64::max);
        let ratio = cfg.eta / cfg.influence_floor;
        let reach = if ratio > 1.0 {
            r_max * (2.0 * cfg.tau * ratio.ln()).sqrt()
        } else {
            0.0
        };
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for p in &avatar.poses {
            lo = lo.inf(&p.center);
            hi = hi.sup(&p.center);
        }
        Ok(Scene {
            avatar,
            mlp,
            cfg: cfg.clone(),
            frames,
            index,
            lo: lo.add_scalar(-reach),
            hi: hi.add_scalar(reach),
        })
    }

    pub fn index(&self) -> &UniformGridIndex {
        &self.index
    }

    fn eval_neighbor(&self, texel: usize, d: Vec3) -> NeighborRec {
        let pt = self.frames[texel].eval(&d, self.cfg.eta, self.cfg.tau);
        let payload = &self.avatar.payloads[texel];
        let cells = plane_cells(payload.res(), &pt.u);
        let feature = sample_with_cells(payload, &cells);
        let mlp = self.mlp.eval(&feature);
        NeighborRec {
            texel: texel as u32,
            d,
            pt,
            cells,
            feature,
            mlp,
        }
    }

    /// Evaluates the sample at `base + offset`; `None` for empty space.
    pub fn eval_sample(&self, base: &Vec3, offset: &Vec3, t: f64, scratch: &mut Vec<Neighbor>) -> Option<SampleRec> {
        let x = base + offset;
        if (0..3).any(|a| x[a] < self.lo[a] || x[a] > self.hi[a]) {
            return None;
        }
        self.index
            .knn_into(base, offset, self.cfg.knn_k, scratch)
            .expect("k validated at scene construction");
        let mut any = false;
        let mut pts = Vec::with_capacity(scratch.len());
        for n in scratch.iter() {
            let d = (base - self.avatar.poses[n.index].center) + offset;
            let pt = self.frames[n.index].eval(&d, self.cfg.eta, self.cfg.tau);
            any |= pt.g >= self.cfg.influence_floor;
            pts.push((n.index, d));
        }
        if !any {
            return None;
        }
        let neighbors: Vec<NeighborRec> = pts.into_iter().map(|(i, d)| self.eval_neighbor(i, d)).collect();
        let (color, alpha, clamped) = blend(&neighbors, self.cfg.epsilon);
        Some(SampleRec {
            t,
            alpha,
            clamped,
            color,
            neighbors,
        })
    }

    /// Stratified sample distances for a pixel.
    pub fn sample_depths(&self, pixel_id: u64, near: f64, far: f64) -> Vec<f64> {
        let j = self.cfg.samples_per_ray;
        let seed = self.cfg.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(pixel_id);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let step = (far - near) / j as f64;
        (0..j)
            .map(|i| near + (i as f64 + rng.random::<f64>()) * step)
            .collect()
    }

    /// Marches one ray. `direction` must be unit length.
    pub fn march(&self, ray: &Ray, pixel_id: u64, near: f64, far: f64) -> Result<(RayOutput, RayRecord)> {
        if (ray.direction.norm() - 1.0).abs() > 1e-6 {
            return Err(Error::invalid(format!(
                "ray direction must be normalized, |d| = {}",
                ray.direction.norm()
            )));
        }
        let mut rec = RayRecord::default();
        let mut scratch = Vec::with_capacity(self.cfg.knn_k);
        let mut trans = 1.0;
        for t in self.sample_depths(pixel_id, near, far) {
            rec.visited += 1;
            if let Some(s) = self.eval_sample(&ray.origin, &(ray.direction * t), t, &mut scratch) {
                trans *= 1.0 - s.alpha;
                rec.samples.push(s);
                if trans < self.cfg.transmittance_cutoff {
                    break;
                }
            }
        }
        let flat: Vec<_> = rec.samples.iter().map(|s| (s.t, s.alpha, s.color)).collect();
        Ok((composite(&flat, &self.cfg.background), rec))
    }

    /// Renders the listed pixels of `camera`.
    pub fn render_pixels(&self, camera: &Camera, pixels: &[(usize, usize)]) -> Result<Vec<(RayOutput, RayRecord)>> {
        camera.validate()?;
        pixels
            .par_iter()
            .map(|&(px, py)| {
                let ray = camera.ray(px, py);
                self.march(&ray, (py * camera.width + px) as u64, camera.near, camera.far)
            })
            .collect()
    }

    /// Reverse pass of one ray. `g_bar` is an extra adjoint applied to every
    /// recorded influence value (the coverage regularizer).
    pub fn backward_ray(&self, rec: &RayRecord, adj: &RayAdjoint, g_bar: f64, grads: &mut SceneGrads) {
        let flat: Vec<_> = rec.samples.iter().map(|s| (s.t, s.alpha, s.color)).collect();
        let sample_adj = composite_backward(&flat, &self.cfg.background, adj);
        let plen = self.avatar.payloads[0].len();
        for (s, (a_bar, c_bar)) in rec.samples.iter().zip(sample_adj) {
            let gsum: f64 = s.neighbors.iter().map(|n| n.pt.g).sum();
            let z = gsum + self.cfg.epsilon;
            let ghat_bar: Vec<f64> = s
                .neighbors
                .iter()
                .map(|n| {
                    let c = n.color();
                    (0..3).map(|k| c_bar[k] * c[k]).sum()
                })
                .collect();
            let cross: f64 = s
                .neighbors
                .iter()
                .zip(&ghat_bar)
                .map(|(n, gb)| gb * n.pt.g)
                .sum::<f64>()
                / (z * z);
            for (n, gb) in s.neighbors.iter().zip(&ghat_bar) {
                let w = n.pt.g / z;
                let mut g_adj = gb / z - cross + g_bar;
                let mut out_bar = [c_bar[0] * w, c_bar[1] * w, c_bar[2] * w, 0.0];
                if !s.clamped {
                    out_bar[3] = a_bar * n.pt.g;
                    g_adj += a_bar * n.opacity();
                }
                let texel = n.texel as usize;
                let f_bar = self.mlp.backward(&n.feature, &n.mlp, &out_bar, &mut grads.mlp);
                let payload = &self.avatar.payloads[texel];
                let pg = &mut grads.payloads[texel * plen..(texel + 1) * plen];
                let u_bar = sample_backward(payload, &n.cells, &f_bar, pg);
                let pose_bar = self.frames[texel].backward(&n.d, &n.pt, &u_bar, g_adj, self.cfg.tau);
                let dst = &mut grads.poses[texel * POSE_DIM..(texel + 1) * POSE_DIM];
                for (g, v) in dst.iter_mut().zip(pose_bar) {
                    *g += v;
                }
            }
        }
    }
}

/// Hashes every discrete decision taken while marching: which samples were
/// empty, neighbor sets, clamps, bilinear cells and ReLU states. Two
/// evaluations with equal signatures lie on the same smooth piece.
pub fn hash_record<H: Hasher>(rec: &RayRecord, h: &mut H) {
    rec.visited.hash(h);
    for s in &rec.samples {
        s.t.to_bits().hash(h);
        s.clamped.hash(h);
        for n in &s.neighbors {
            n.texel.hash(h);
            n.pt.clamp_mask.hash(h);
            for c in &n.cells {
                (c.row, c.col).hash(h);
            }
            RenderMlp::relu_mask(&n.mlp).hash(h);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn two_sample_composite() {
        let s = [(1.0, 0.5, [1.0, 0.0, 0.0]), (2.0, 0.5, [0.0, 1.0, 0.0])];
        let out = composite(&s, &[0.0; 3]);
        assert_abs_diff_eq!(out.color[0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(out.color[1], 0.25, epsilon = 1e-15);
        assert_eq!(out.color[2], 0.0);
        assert_abs_diff_eq!(out.depth, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(out.alpha, 0.75, epsilon = 1e-15);
    }

    #[test]
    fn empty_composite_is_background() {
        let out = composite(&[], &[1.0; 3]);
        assert_eq!(out.color, [1.0; 3]);
        assert_eq!(out.alpha, 0.0);
    }

    #[test]
    fn fully_opaque_first_sample_occludes() {
        let s = [(1.0, 1.0, [0.2, 0.4, 0.6]), (2.0, 0.7, [1.0, 1.0, 1.0])];
        let out = composite(&s, &[0.9, 0.1, 0.3]);
        assert_eq!(out.color, [0.2, 0.4, 0.6]);
        assert_eq!(out.alpha, 1.0);
    }

    #[test]
    fn composite_backward_matches_finite_differences() {
        let base = vec![
            (1.0, 0.3, [0.2, 0.5, 0.9]),
            (1.5, 0.6, [0.7, 0.1, 0.4]),
            (2.2, 0.45, [0.3, 0.8, 0.2]),
        ];
        let bg = [0.9, 0.8, 0.7];
        let adj = RayAdjoint {
            color: [0.3, -0.6, 0.8],
            depth: 0.4,
            alpha: -0.25,
        };
        let obj = |s: &[(f64, f64, [f64; 3])]| {
            let o = composite(s, &bg);
            (0..3).map(|k| adj.color[k] * o.color[k]).sum::<f64>() + adj.depth * o.depth + adj.alpha * o.alpha
        };
        let grads = composite_backward(&base, &bg, &adj);
        let h = 1e-6;
        for j in 0..3 {
            let mut a = base.clone();
            let mut b = base.clone();
            a[j].1 += h;
            b[j].1 -= h;
            assert_abs_diff_eq!(grads[j].0, (obj(&a) - obj(&b)) / (2.0 * h), epsilon = 1e-8);
            for k in 0..3 {
                let mut a = base.clone();
                let mut b = base.clone();
                a[j].2[k] += h;
                b[j].2[k] -= h;
                assert_abs_diff_eq!(grads[j].1[k], (obj(&a) - obj(&b)) / (2.0 * h), epsilon = 1e-8);
            }
        }
    }
}

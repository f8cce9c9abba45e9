use std::hash::{Hash, Hasher};

use crate::error::{Error, Result};
use crate::grad::{Evaluation, GroupKind, Objective, ParamSet, Tape};
use crate::losses::{total_loss, LossInputs, LossWeights};
use crate::model::{Camera, GaussianPose, RenderConfig, UVAvatar, POSE_DIM};
use crate::render::{hash_record, RayAdjoint, RenderMlp, Scene, SceneGrads};

use super::decoder::LatentDecoder;

/// Learning rate per parameter group.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GroupRates {
    pub poses: f64,
    pub payloads: f64,
    pub mlp: f64,
    pub latent: f64,
    pub decoder: f64,
}

impl Default for GroupRates {
    fn default() -> Self {
        GroupRates {
            poses: 1e-5,
            payloads: 1e-2,
            mlp: 5e-2,
            latent: 0.05,
            decoder: 0.0025,
        }
    }
}

/// Packs the optimizable state. With a decoder the payloads are replaced
/// by the latent code and decoder weights.
pub fn pack_params(
    avatar: &UVAvatar,
    mlp: &RenderMlp,
    decoder: Option<&LatentDecoder>,
    rates: &GroupRates,
) -> Result<ParamSet> {
    let mut p = ParamSet::new();
    let poses: Vec<f64> = avatar.poses.iter().flat_map(|q| q.to_array()).collect();
    p.push_group(GroupKind::Poses, &poses, rates.poses)?;
    match decoder {
        None => {
            let payloads: Vec<f64> = avatar.payloads.iter().flat_map(|q| q.data().iter().copied()).collect();
            p.push_group(GroupKind::Payloads, &payloads, rates.payloads)?;
        }
        Some(d) => {
            p.push_group(GroupKind::Latent, &d.z, rates.latent)?;
            p.push_group(GroupKind::Decoder, &d.weights_flat(), rates.decoder)?;
        }
    }
    p.push_group(GroupKind::Mlp, &mlp.to_flat(), rates.mlp)?;
    Ok(p)
}

/// Inverse of [`pack_params`] against a template carrying the fixed state
/// (dimensions, anchors).
pub fn unpack_params(
    params: &ParamSet,
    template: &UVAvatar,
    decoder: Option<&LatentDecoder>,
) -> Result<(UVAvatar, RenderMlp, Option<LatentDecoder>, u64)> {
    let mut avatar = template.clone();
    let poses = params
        .group(GroupKind::Poses)
        .ok_or_else(|| Error::invalid("missing pose group"))?;
    for (dst, src) in avatar.poses.iter_mut().zip(poses.chunks_exact(POSE_DIM)) {
        *dst = GaussianPose::from_slice(src);
        if !(dst.radii.min() > 0.0) {
            return Err(Error::numeric("unpack_params", "a radius left the positive range"));
        }
    }
    let mut sig = 0;
    let dec = match decoder {
        None => {
            let flat = params
                .group(GroupKind::Payloads)
                .ok_or_else(|| Error::invalid("missing payload group"))?;
            let plen = template.payloads[0].len();
            for (dst, src) in avatar.payloads.iter_mut().zip(flat.chunks_exact(plen)) {
                dst.data_mut().copy_from_slice(src);
            }
            None
        }
        Some(d) => {
            let mut d = d.clone();
            d.z.copy_from_slice(params.group(GroupKind::Latent).ok_or_else(|| Error::invalid("missing latent group"))?);
            d.set_weights_flat(params.group(GroupKind::Decoder).ok_or_else(|| Error::invalid("missing decoder group"))?)?;
            let (payloads, s) = d.decode_traced(template.height, template.width)?;
            avatar.payloads = payloads;
            sig = s;
            Some(d)
        }
    };
    let mlp = RenderMlp::from_flat(params.group(GroupKind::Mlp).ok_or_else(|| Error::invalid("missing mlp group"))?)?;
    Ok((avatar, mlp, dec, sig))
}

/// Supervision for one image window.
#[derive(Debug, Clone)]
pub struct PatchTarget {
    pub pixels: Vec<(usize, usize)>,
    /// Three scalars per pixel.
    pub color: Vec<f64>,
    pub depth: Option<Vec<f64>>,
    /// Target alpha; `None` disables the silhouette term.
    pub mask: Option<Vec<f64>>,
}

/// Full reconstruction loss on one patch as a function of a [`ParamSet`].
pub struct SceneObjective<'a> {
    pub template: &'a UVAvatar,
    pub decoder: Option<&'a LatentDecoder>,
    pub camera: &'a Camera,
    pub target: &'a PatchTarget,
    pub cfg: RenderConfig,
    pub weights: LossWeights,
}

impl SceneObjective<'_> {
    fn run(&self, params: &ParamSet, want_grad: bool) -> Result<(Evaluation, Vec<f64>)> {
        let (avatar, mlp, dec, dec_sig) = unpack_params(params, self.template, self.decoder)?;
        let scene = Scene::new(&avatar, &mlp, &self.cfg)?;
        let rays = scene.render_pixels(self.camera, &self.target.pixels)?;

        let mut hasher = std::collections::hash_map::DefaultHasher::new();
        dec_sig.hash(&mut hasher);
        let mut influence_sum = 0.0;
        let mut points = 0usize;
        for (_, rec) in &rays {
            hash_record(rec, &mut hasher);
            points += rec.visited;
            for s in &rec.samples {
                for n in &s.neighbors {
                    influence_sum += n.pt.g;
                }
            }
        }
        let k = self.cfg.knn_k as f64;
        let coverage_scale = 1.0 / (points.max(1) as f64 * k);

        let tape = Tape::new();
        let color: Vec<_> = rays.iter().flat_map(|(r, _)| r.color).map(|v| tape.var(v)).collect();
        let depth: Vec<_> = rays.iter().map(|(r, _)| tape.var(r.depth)).collect();
        let alpha: Vec<_> = rays.iter().map(|(r, _)| tape.var(r.alpha)).collect();
        let coverage = tape.var(influence_sum * coverage_scale);
        let poses = tape.vars(params.group(GroupKind::Poses).expect("checked in unpack"));
        let z = dec.as_ref().map(|d| tape.vars(&d.z));
        let ones;
        let (mask, weights) = match &self.target.mask {
            Some(m) => (m.as_slice(), self.weights.clone()),
            None => {
                ones = vec![1.0; depth.len()];
                let mut w = self.weights.clone();
                w.silhouette = 0.0;
                (ones.as_slice(), w)
            }
        };
        let inputs = LossInputs {
            color: &color,
            depth: &depth,
            alpha: &alpha,
            target_color: &self.target.color,
            target_depth: self.target.depth.as_deref(),
            target_mask: mask,
            pixel_weight: None,
            coverage: Some(coverage),
            poses: &poses,
            anchors: &avatar.anchors,
            height: avatar.height,
            width: avatar.width,
            z: z.as_deref(),
        };
        let total = total_loss(&inputs, &weights)?.total;
        tape.signature().hash(&mut hasher);
        if !total.value().is_finite() {
            return Err(Error::numeric(
                tape.first_non_finite().unwrap_or("render"),
                format!("loss is {}", total.value()),
            ));
        }
        let eval = Evaluation {
            loss: total.value(),
            signature: hasher.finish(),
        };
        if !want_grad {
            return Ok((eval, Vec::new()));
        }

        let adj = tape.gradient(total);
        let g_bar = adj[coverage.index()] * coverage_scale;
        let mut grads = SceneGrads::zeros(&avatar);
        for (i, (_, rec)) in rays.iter().enumerate() {
            let ra = RayAdjoint {
                color: [0, 1, 2].map(|c| adj[color[3 * i + c].index()]),
                depth: adj[depth[i].index()],
                alpha: adj[alpha[i].index()],
            };
            scene.backward_ray(rec, &ra, g_bar, &mut grads);
        }
        let mut out = vec![0.0; params.len()];
        for g in &params.groups {
            let dst = &mut out[g.offset..g.offset + g.len];
            match g.kind {
                GroupKind::Poses => {
                    for (i, d) in dst.iter_mut().enumerate() {
                        *d = grads.poses[i] + adj[poses[i].index()];
                    }
                }
                GroupKind::Payloads => dst.copy_from_slice(&grads.payloads),
                GroupKind::Mlp => dst.copy_from_slice(&grads.mlp),
                GroupKind::Latent | GroupKind::Decoder => {}
            }
        }
        if let Some(d) = &dec {
            let (gz, gw) = d.backward(avatar.height, avatar.width, &grads.payloads);
            let zv = z.as_ref().expect("latent mode has z");
            let lat = params.group_info(GroupKind::Latent).expect("latent group");
            for (i, v) in gz.iter().enumerate() {
                out[lat.offset + i] = v + adj[zv[i].index()];
            }
            let dg = params.group_info(GroupKind::Decoder).expect("decoder group");
            out[dg.offset..dg.offset + dg.len].copy_from_slice(&gw);
        }
        Ok((eval, out))
    }
}

impl Objective for SceneObjective<'_> {
    fn evaluate(&self, params: &ParamSet) -> Result<Evaluation> {
        Ok(self.run(params, false)?.0)
    }

    fn loss_and_gradient(&self, params: &ParamSet) -> Result<(Evaluation, Vec<f64>)> {
        self.run(params, true)
    }
}

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::model::{GaussianPose, TriPlanePayload, UVAvatar, Vec3, POSE_DIM};

/// Per-texel layout: `height × width` vectors of `9 + 3·S·S·C` values
/// (pose, then payload in storage order).
#[derive(Debug, Clone, PartialEq)]
pub struct TexelTensor {
    pub height: usize,
    pub width: usize,
    pub res: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl TexelTensor {
    pub fn texel_len(&self) -> usize {
        POSE_DIM + 3 * self.res * self.res * self.channels
    }

    pub fn validate(&self) -> Result<()> {
        if self.height * self.width * self.texel_len() != self.data.len() || self.res == 0 {
            return Err(Error::invalid("texel tensor length does not match its dimensions"));
        }
        Ok(())
    }
}

/// Unfolded layout: `(H·S) × (W·S) × (9 + 3C)`, row-major, channel fastest.
/// Pose channels are replicated over each texel's `S × S` block.
#[derive(Debug, Clone, PartialEq)]
pub struct UVTensor {
    pub rows: usize,
    pub cols: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl UVTensor {
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.rows, self.cols, self.channels)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn index(&self, row: usize, col: usize, ch: usize) -> usize {
        (row * self.cols + col) * self.channels + ch
    }
}

/// Spreads every texel over an `S × S` block.
pub fn unfold(t: &TexelTensor) -> Result<UVTensor> {
    t.validate()?;
    let (s, c) = (t.res, t.channels);
    let ch = POSE_DIM + 3 * c;
    let rows = t.height * s;
    let cols = t.width * s;
    let mut data = vec![0.0; rows * cols * ch];
    let tl = t.texel_len();
    for h in 0..t.height {
        for w in 0..t.width {
            let src = &t.data[(h * t.width + w) * tl..(h * t.width + w + 1) * tl];
            for i in 0..s {
                for j in 0..s {
                    let o = ((h * s + i) * cols + (w * s + j)) * ch;
                    data[o..o + POSE_DIM].copy_from_slice(&src[..POSE_DIM]);
                    for p in 0..3 {
                        let so = POSE_DIM + ((p * s + i) * s + j) * c;
                        data[o + POSE_DIM + p * c..o + POSE_DIM + (p + 1) * c].copy_from_slice(&src[so..so + c]);
                    }
                }
            }
        }
    }
    Ok(UVTensor {
        rows,
        cols,
        channels: ch,
        data,
    })
}

/// Inverse of [`unfold`]. Pose channels are averaged over each block as
/// `v₀ + mean(vᵢ − v₀)`, which returns `v₀` bit-exactly when the block is
/// replicated.
pub fn fold(u: &UVTensor, res: usize) -> Result<TexelTensor> {
    if res == 0 || !u.rows.is_multiple_of(res) || !u.cols.is_multiple_of(res) || u.channels < POSE_DIM || !(u.channels - POSE_DIM).is_multiple_of(3) {
        return Err(Error::invalid(format!(
            "cannot fold a {}x{}x{} tensor with S = {res}",
            u.rows, u.cols, u.channels
        )));
    }
    if u.data.len() != u.rows * u.cols * u.channels {
        return Err(Error::invalid("UV tensor length does not match its shape"));
    }
    let c = (u.channels - POSE_DIM) / 3;
    let (height, width) = (u.rows / res, u.cols / res);
    let tl = POSE_DIM + 3 * res * res * c;
    let mut data = vec![0.0; height * width * tl];
    let count = (res * res) as f64;
    for h in 0..height {
        for w in 0..width {
            let dst = &mut data[(h * width + w) * tl..(h * width + w + 1) * tl];
            let base = u.index(h * res, w * res, 0);
            for k in 0..POSE_DIM {
                let v0 = u.data[base + k];
                let mut acc = 0.0;
                for i in 0..res {
                    for j in 0..res {
                        acc += u.data[u.index(h * res + i, w * res + j, k)] - v0;
                    }
                }
                dst[k] = v0 + acc / count;
            }
            for i in 0..res {
                for j in 0..res {
                    let o = u.index(h * res + i, w * res + j, 0);
                    for p in 0..3 {
                        let d = POSE_DIM + ((p * res + i) * res + j) * c;
                        dst[d..d + c].copy_from_slice(&u.data[o + POSE_DIM + p * c..o + POSE_DIM + (p + 1) * c]);
                    }
                }
            }
        }
    }
    Ok(TexelTensor {
        height,
        width,
        res,
        channels: c,
        data,
    })
}

pub const CENTER_SHIFT: f64 = 0.12;
pub const RADIUS_MAX: f64 = 0.15;
pub const RADIUS_MID: f64 = 0.06;
/// Smallest radius produced by denormalization.
pub const RADIUS_FLOOR: f64 = 1e-6;
const ATANH_LIMIT: f64 = 1.0 - 1e-6;

pub fn normalize_center(x: f64) -> f64 {
    (x + CENTER_SHIFT) * 2.0
}

pub fn denormalize_center(n: f64) -> f64 {
    n / 2.0 - CENTER_SHIFT
}

pub fn normalize_rotation(x: f64) -> f64 {
    x / PI
}

pub fn denormalize_rotation(n: f64) -> f64 {
    n * PI
}

pub fn normalize_radius(x: f64) -> f64 {
    (x.abs().clamp(0.0, RADIUS_MAX) - RADIUS_MID) * 10.0
}

pub fn denormalize_radius(n: f64) -> f64 {
    (n / 10.0 + RADIUS_MID).max(RADIUS_FLOOR)
}

pub fn normalize_payload(x: f64) -> f64 {
    x.tanh()
}

pub fn denormalize_payload(n: f64) -> f64 {
    n.clamp(-ATANH_LIMIT, ATANH_LIMIT).atanh()
}

/// Normalized per-texel tensor of an avatar.
pub fn normalize_texels(avatar: &UVAvatar) -> Result<TexelTensor> {
    avatar.validate()?;
    let (res, channels) = (avatar.res(), avatar.channels());
    let mut data = Vec::with_capacity(avatar.len() * (POSE_DIM + avatar.payloads[0].len()));
    for (p, q) in avatar.poses.iter().zip(&avatar.payloads) {
        data.extend(p.center.iter().map(|v| normalize_center(*v)));
        data.extend(p.rotation.iter().map(|v| normalize_rotation(*v)));
        data.extend(p.radii.iter().map(|v| normalize_radius(*v)));
        data.extend(q.data().iter().map(|v| normalize_payload(*v)));
    }
    Ok(TexelTensor {
        height: avatar.height,
        width: avatar.width,
        res,
        channels,
        data,
    })
}

/// Rebuilds an avatar from normalized texels; anchors come from `template`.
pub fn denormalize_texels(t: &TexelTensor, template: &UVAvatar) -> Result<UVAvatar> {
    t.validate()?;
    if (t.height, t.width) != (template.height, template.width) {
        return Err(Error::invalid("tensor and template grids differ"));
    }
    let tl = t.texel_len();
    let mut out = template.clone();
    out.poses.clear();
    out.payloads.clear();
    for chunk in t.data.chunks_exact(tl) {
        let v = |o: usize, f: fn(f64) -> f64| Vec3::new(f(chunk[o]), f(chunk[o + 1]), f(chunk[o + 2]));
        out.poses.push(GaussianPose {
            center: v(0, denormalize_center),
            rotation: v(3, denormalize_rotation),
            radii: v(6, denormalize_radius),
        });
        let payload = chunk[POSE_DIM..].iter().map(|n| denormalize_payload(*n)).collect();
        out.payloads.push(TriPlanePayload::from_vec(t.res, t.channels, payload)?);
    }
    Ok(out)
}

pub fn normalize_avatar(avatar: &UVAvatar) -> Result<UVTensor> {
    unfold(&normalize_texels(avatar)?)
}

pub fn denormalize_avatar(tensor: &UVTensor, template: &UVAvatar) -> Result<UVAvatar> {
    denormalize_texels(&fold(tensor, template.res())?, template)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_texels(h: usize, w: usize, s: usize, c: usize, seed: u64) -> TexelTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = h * w * (POSE_DIM + 3 * s * s * c);
        TexelTensor {
            height: h,
            width: w,
            res: s,
            channels: c,
            data: (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
        }
    }

    #[test]
    fn unfold_shape_at_full_scale() {
        let t = TexelTensor {
            height: 32,
            width: 32,
            res: 8,
            channels: 8,
            data: vec![0.25; 32 * 32 * (9 + 3 * 64 * 8)],
        };
        let u = unfold(&t).unwrap();
        assert_eq!(u.shape(), (256, 256, 33));
        assert!(u.data.iter().all(|v| *v == 0.25));
    }

    #[test]
    fn fold_inverts_unfold_bitwise() {
        let t = random_texels(3, 2, 4, 5, 1);
        assert_eq!(fold(&unfold(&t).unwrap(), 4).unwrap(), t);
    }

    #[test]
    fn pose_channels_are_replicated() {
        let u = unfold(&random_texels(2, 2, 3, 2, 2)).unwrap();
        for k in 0..POSE_DIM {
            let v = u.data[u.index(3, 3, k)];
            for i in 3..6 {
                for j in 3..6 {
                    assert_eq!(u.data[u.index(i, j, k)], v);
                }
            }
        }
    }

    #[test]
    fn fold_averages_broken_replication() {
        let mut u = unfold(&random_texels(1, 1, 2, 1, 3)).unwrap();
        let base = u.data[0];
        for (n, delta) in [(1, 0.4), (2, -0.2), (3, 0.2)] {
            let i = u.index(n / 2, n % 2, 0);
            u.data[i] = base + delta;
        }
        let f = fold(&u, 2).unwrap();
        assert!((f.data[0] - (base + 0.1)).abs() < 1e-15);
    }

    #[test]
    fn table_formulas() {
        assert_eq!(normalize_center(-0.12), 0.0);
        assert_eq!(normalize_center(0.38), 1.0);
        assert_eq!(normalize_radius(0.06), 0.0);
        assert!((normalize_radius(0.15) - 0.9).abs() < 1e-15);
        assert_eq!(normalize_rotation(PI), 1.0);
        assert_eq!(denormalize_rotation(1.0), PI);
    }

    #[test]
    fn payload_round_trip_within_tolerance() {
        for i in 0..=100 {
            let x = -5.0 + 0.1 * i as f64;
            assert!((denormalize_payload(normalize_payload(x)) - x).abs() < 1e-6 * 6.0, "{x}");
        }
    }
}

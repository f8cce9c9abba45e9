use crate::error::{Error, Result};

use super::pose::{euler_from_matrix, GaussianPose};
use super::{Mat3, Vec3};

/// Scalars per Gaussian pose: center (3), Euler rotation (3), radii (3).
pub const POSE_DIM: usize = 9;

/// Three square feature planes (XY, XZ, YZ) of `res × res × channels` values.
///
/// Storage is `[plane][row][col][channel]`, channel fastest. A resolution of
/// one degenerates to a per-texel feature vector: every query returns the sum
/// of the three stored node vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct TriPlanePayload {
    res: usize,
    channels: usize,
    data: Vec<f64>,
}

impl TriPlanePayload {
    pub fn zeros(res: usize, channels: usize) -> Self {
        TriPlanePayload {
            res,
            channels,
            data: vec![0.0; 3 * res * res * channels],
        }
    }

    pub fn from_vec(res: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if res == 0 || channels == 0 {
            return Err(Error::invalid("payload resolution and channels must be positive"));
        }
        if data.len() != 3 * res * res * channels {
            return Err(Error::invalid(format!(
                "payload expects {} scalars, got {}",
                3 * res * res * channels,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite payload entry at {i}")));
        }
        Ok(TriPlanePayload {
            res,
            channels,
            data,
        })
    }

    pub fn res(&self) -> usize {
        self.res
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn offset(&self, plane: usize, row: usize, col: usize) -> usize {
        ((plane * self.res + row) * self.res + col) * self.channels
    }

    pub fn node(&self, plane: usize, row: usize, col: usize) -> &[f64] {
        let o = self.offset(plane, row, col);
        &self.data[o..o + self.channels]
    }

    pub fn node_mut(&mut self, plane: usize, row: usize, col: usize) -> &mut [f64] {
        let o = self.offset(plane, row, col);
        let c = self.channels;
        &mut self.data[o..o + c]
    }
}

/// Per-texel rest vertices, unit normals and scales of the underlying face
/// mesh, rasterized onto an `height × width` UV grid.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorGrid {
    pub height: usize,
    pub width: usize,
    pub positions: Vec<Vec3>,
    pub normals: Vec<Vec3>,
    pub scales: Vec<f64>,
}

impl AnchorGrid {
    pub fn validate(&self) -> Result<()> {
        let n = self.height * self.width;
        if n == 0 {
            return Err(Error::invalid("anchor grid must be non-empty"));
        }
        if self.positions.len() != n || self.normals.len() != n || self.scales.len() != n {
            return Err(Error::invalid(format!(
                "anchor grid {}x{} expects {n} entries, got positions={} normals={} scales={}",
                self.height,
                self.width,
                self.positions.len(),
                self.normals.len(),
                self.scales.len()
            )));
        }
        for i in 0..n {
            let (h, w) = (i / self.width, i % self.width);
            let p = &self.positions[i];
            let nrm = &self.normals[i];
            let s = self.scales[i];
            if !p.iter().chain(nrm.iter()).all(|v| v.is_finite()) || !s.is_finite() {
                return Err(Error::invalid(format!("non-finite anchor data at texel ({h}, {w})")));
            }
            if (nrm.norm() - 1.0).abs() > 1e-6 {
                return Err(Error::invalid(format!(
                    "normal at texel ({h}, {w}) has norm {}, expected unit length",
                    nrm.norm()
                )));
            }
            if s <= 0.0 {
                return Err(Error::invalid(format!("non-positive scale at texel ({h}, {w})")));
            }
        }
        Ok(())
    }
}

/// The trainable identity: an `height × width` UV grid of Gaussian poses and
/// tri-plane payloads, together with the rest anchors they were seeded from.
#[derive(Debug, Clone, PartialEq)]
pub struct UVAvatar {
    pub height: usize,
    pub width: usize,
    pub poses: Vec<GaussianPose>,
    pub payloads: Vec<TriPlanePayload>,
    pub anchors: Vec<Vec3>,
    pub anchor_normals: Vec<Vec3>,
    pub anchor_scales: Vec<f64>,
}

impl UVAvatar {
    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn res(&self) -> usize {
        self.payloads.first().map_or(0, |p| p.res())
    }

    pub fn channels(&self) -> usize {
        self.payloads.first().map_or(0, |p| p.channels())
    }

    pub fn texel(&self, h: usize, w: usize) -> usize {
        h * self.width + w
    }

    pub fn centers(&self) -> Vec<Vec3> {
        self.poses.iter().map(|p| p.center).collect()
    }

    pub fn anchor_grid(&self) -> AnchorGrid {
        AnchorGrid {
            height: self.height,
            width: self.width,
            positions: self.anchors.clone(),
            normals: self.anchor_normals.clone(),
            scales: self.anchor_scales.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if n == 0 {
            return Err(Error::invalid("avatar grid must be non-empty"));
        }
        if self.poses.len() != n
            || self.payloads.len() != n
            || self.anchors.len() != n
            || self.anchor_normals.len() != n
            || self.anchor_scales.len() != n
        {
            return Err(Error::invalid(format!(
                "avatar grids must all hold {n} texels"
            )));
        }
        let (res, ch) = (self.res(), self.channels());
        for (i, (pose, payload)) in self.poses.iter().zip(&self.payloads).enumerate() {
            pose.validate()
                .map_err(|e| Error::invalid(format!("texel {i}: {e}")))?;
            if payload.res() != res || payload.channels() != ch {
                return Err(Error::invalid(format!("texel {i}: payload shape differs")));
            }
            if payload.data().iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("texel {i}: non-finite payload")));
            }
        }
        if self.anchors.iter().any(|a| !a.iter().all(|v| v.is_finite())) {
            return Err(Error::invalid("non-finite anchor"));
        }
        Ok(())
    }

    /// Copy with every scalar rounded through `f32`, i.e. exactly what the
    /// avatar file stores.
    pub fn quantized_f32(&self) -> UVAvatar {
        let q = |v: f64| v as f32 as f64;
        let qv = |v: &Vec3| v.map(q);
        UVAvatar {
            height: self.height,
            width: self.width,
            poses: self
                .poses
                .iter()
                .map(|p| GaussianPose {
                    center: qv(&p.center),
                    rotation: qv(&p.rotation),
                    radii: qv(&p.radii),
                })
                .collect(),
            payloads: self
                .payloads
                .iter()
                .map(|p| {
                    let mut p = p.clone();
                    p.data_mut().iter_mut().for_each(|v| *v = q(*v));
                    p
                })
                .collect(),
            anchors: self.anchors.iter().map(qv).collect(),
            anchor_normals: self.anchor_normals.iter().map(qv).collect(),
            anchor_scales: self.anchor_scales.iter().map(|s| q(*s)).collect(),
        }
    }
}

/// Shortest-arc rotation carrying +z onto `n`.
fn align_z_to(n: &Vec3) -> Mat3 {
    let z = Vec3::z();
    let c = z.dot(n);
    if c < -1.0 + 1e-12 {
        // Antipodal: any half turn about an axis orthogonal to z.
        return Mat3::new(1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, -1.0);
    }
    let v = z.cross(n);
    let vx = v.cross_matrix();
    Mat3::identity() + vx + vx * vx * (1.0 / (1.0 + c))
}

/// Seeds an avatar from anchors: centers on the vertices, local +z along the
/// normal (shortest arc, zero roll), radii `(s, s, s/2)` and zero payloads.
pub fn init_from_anchors(grid: &AnchorGrid, res: usize, channels: usize) -> Result<UVAvatar> {
    grid.validate()?;
    if res == 0 || channels == 0 {
        return Err(Error::invalid("payload resolution and channels must be positive"));
    }
    let poses = grid
        .positions
        .iter()
        .zip(&grid.normals)
        .zip(&grid.scales)
        .map(|((p, n), &s)| {
            GaussianPose::new(
                *p,
                euler_from_matrix(&align_z_to(n)),
                Vec3::new(s, s, 0.5 * s),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let n = grid.height * grid.width;
    Ok(UVAvatar {
        height: grid.height,
        width: grid.width,
        poses,
        payloads: vec![TriPlanePayload::zeros(res, channels); n],
        anchors: grid.positions.clone(),
        anchor_normals: grid.normals.clone(),
        anchor_scales: grid.scales.clone(),
    })
}

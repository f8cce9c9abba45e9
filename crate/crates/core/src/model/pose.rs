use crate::error::{Error, Result};

use super::{Mat3, Vec3};

/// Half-width of the local tri-plane cube, in standard deviations.
pub const LOCAL_EXTENT_SIGMAS: f64 = 3.0;

/// Center, intrinsic XYZ Euler rotation and per-axis standard deviations of
/// one Gaussian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianPose {
    pub center: Vec3,
    pub rotation: Vec3,
    pub radii: Vec3,
}

impl GaussianPose {
    pub fn new(center: Vec3, rotation: Vec3, radii: Vec3) -> Result<Self> {
        let pose = GaussianPose {
            center,
            rotation,
            radii,
        };
        pose.validate()?;
        Ok(pose)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.center.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid(format!("non-finite center {:?}", self.center)));
        }
        if !self.rotation.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite rotation {:?}",
                self.rotation
            )));
        }
        if !self.radii.iter().all(|r| r.is_finite() && *r > 0.0) {
            return Err(Error::invalid(format!(
                "radii must be positive and finite, got {:?}",
                self.radii
            )));
        }
        Ok(())
    }

    /// The nine pose scalars in parameter order: center, rotation, radii.
    pub fn to_array(&self) -> [f64; 9] {
        [
            self.center.x,
            self.center.y,
            self.center.z,
            self.rotation.x,
            self.rotation.y,
            self.rotation.z,
            self.radii.x,
            self.radii.y,
            self.radii.z,
        ]
    }

    pub fn from_slice(v: &[f64]) -> Self {
        GaussianPose {
            center: Vec3::new(v[0], v[1], v[2]),
            rotation: Vec3::new(v[3], v[4], v[5]),
            radii: Vec3::new(v[6], v[7], v[8]),
        }
    }
}

fn rx(a: f64) -> Mat3 {
    let (s, c) = a.sin_cos();
    Mat3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

fn ry(b: f64) -> Mat3 {
    let (s, c) = b.sin_cos();
    Mat3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

fn rz(g: f64) -> Mat3 {
    let (s, c) = g.sin_cos();
    Mat3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

fn drx(a: f64) -> Mat3 {
    let (s, c) = a.sin_cos();
    Mat3::new(0.0, 0.0, 0.0, 0.0, -s, -c, 0.0, c, -s)
}

fn dry(b: f64) -> Mat3 {
    let (s, c) = b.sin_cos();
    Mat3::new(-s, 0.0, c, 0.0, 0.0, 0.0, -c, 0.0, -s)
}

fn drz(g: f64) -> Mat3 {
    let (s, c) = g.sin_cos();
    Mat3::new(-s, -c, 0.0, c, -s, 0.0, 0.0, 0.0, 0.0)
}

/// Rotation for intrinsic X-then-Y-then-Z Euler angles: `R = Rx(a) Ry(b) Rz(c)`.
pub fn rotation_matrix(angles: &Vec3) -> Result<Mat3> {
    if !angles.iter().all(|v| v.is_finite()) {
        return Err(Error::invalid(format!("non-finite Euler angles {angles:?}")));
    }
    Ok(rx(angles.x) * ry(angles.y) * rz(angles.z))
}

/// Partial derivatives of [`rotation_matrix`] with respect to each angle.
pub fn rotation_derivatives(angles: &Vec3) -> [Mat3; 3] {
    let (a, b, c) = (angles.x, angles.y, angles.z);
    [
        drx(a) * ry(b) * rz(c),
        rx(a) * dry(b) * rz(c),
        rx(a) * ry(b) * drz(c),
    ]
}

/// Inverse of [`rotation_matrix`]. At gimbal lock the roll is folded into the
/// first angle.
pub fn euler_from_matrix(r: &Mat3) -> Vec3 {
    let sb = r[(0, 2)].clamp(-1.0, 1.0);
    let b = sb.asin();
    if sb.abs() < 1.0 - 1e-12 {
        let a = (-r[(1, 2)]).atan2(r[(2, 2)]);
        let c = (-r[(0, 1)]).atan2(r[(0, 0)]);
        Vec3::new(a, b, c)
    } else {
        let a = r[(2, 1)].atan2(r[(1, 1)]);
        Vec3::new(a, b, 0.0)
    }
}

/// `Σ⁻¹ = R · diag(radii⁻²) · Rᵀ`.
pub fn precision_matrix(pose: &GaussianPose) -> Result<Mat3> {
    pose.validate()?;
    let r = rotation_matrix(&pose.rotation)?;
    let inv_var = Mat3::from_diagonal(&pose.radii.map(|s| 1.0 / (s * s)));
    Ok(r * inv_var * r.transpose())
}

/// Scaled anisotropic Gaussian influence `η · exp(−(x−μ)ᵀ Σ⁻¹ (x−μ) / 2τ)`.
pub fn rbf_influence(pose: &GaussianPose, x: &Vec3, eta: f64, tau: f64) -> Result<f64> {
    let frame = LocalFrame::new(pose)?;
    Ok(frame.eval(&(x - pose.center), eta, tau).g)
}

/// Maps a world point into the Gaussian's local cube, clamped to `[-1, 1]³`.
/// The cube spans ±3 standard deviations along each principal axis.
pub fn world_to_local(pose: &GaussianPose, x: &Vec3) -> Result<Vec3> {
    let frame = LocalFrame::new(pose)?;
    Ok(Vec3::from(frame.eval(&(x - pose.center), 1.0, 1.0).u))
}

/// Rotation and its angle derivatives cached for repeated point queries.
#[derive(Debug, Clone)]
pub struct LocalFrame {
    pub rot: Mat3,
    pub drot: [Mat3; 3],
    pub radii: Vec3,
}

/// Per-point evaluation of a [`LocalFrame`].
#[derive(Debug, Clone, Copy)]
pub struct FramePoint {
    /// `Rᵀ (x − μ)`, unscaled.
    pub l: Vec3,
    pub g: f64,
    pub u: [f64; 3],
    /// Bit `i` set when local coordinate `i` was clamped.
    pub clamp_mask: u8,
}

impl LocalFrame {
    pub fn new(pose: &GaussianPose) -> Result<Self> {
        pose.validate()?;
        Ok(LocalFrame {
            rot: rotation_matrix(&pose.rotation)?,
            drot: rotation_derivatives(&pose.rotation),
            radii: pose.radii,
        })
    }

    /// Evaluates influence and local coordinates at offset `d = x − μ`.
    pub fn eval(&self, d: &Vec3, eta: f64, tau: f64) -> FramePoint {
        let l = self.rot.tr_mul(d);
        let mut m = 0.0;
        let mut u = [0.0; 3];
        let mut clamp_mask = 0u8;
        for i in 0..3 {
            let q = l[i] / self.radii[i];
            m += q * q;
            let v = q / LOCAL_EXTENT_SIGMAS;
            if v > 1.0 {
                u[i] = 1.0;
                clamp_mask |= 1 << i;
            } else if v < -1.0 {
                u[i] = -1.0;
                clamp_mask |= 1 << i;
            } else {
                u[i] = v;
            }
        }
        let g = eta * (-m / (2.0 * tau)).exp();
        FramePoint {
            l,
            g,
            u,
            clamp_mask,
        }
    }

    /// Pulls adjoints of `g` and `u` back to the nine pose scalars
    /// (center, rotation, radii).
    pub fn backward(&self, d: &Vec3, p: &FramePoint, u_bar: &[f64; 3], g_bar: f64, tau: f64) -> [f64; 9] {
        let mut l_bar = Vec3::zeros();
        let mut r_bar = Vec3::zeros();
        let m_bar = -g_bar * p.g / (2.0 * tau);
        for i in 0..3 {
            let r = self.radii[i];
            let q = p.l[i] / r;
            // m = Σ q², q = l / r
            l_bar[i] += m_bar * 2.0 * q / r;
            r_bar[i] -= m_bar * 2.0 * q * q / r;
            if p.clamp_mask & (1 << i) == 0 {
                let s = LOCAL_EXTENT_SIGMAS * r;
                l_bar[i] += u_bar[i] / s;
                r_bar[i] -= u_bar[i] * p.l[i] / (s * r);
            }
        }
        let d_bar = self.rot * l_bar;
        let mut out = [0.0; 9];
        for i in 0..3 {
            out[i] = -d_bar[i];
            out[3 + i] = d.dot(&(self.drot[i] * l_bar));
            out[6 + i] = r_bar[i];
        }
        out
    }
}

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{Mat3, Vec3};

/// Pinhole camera looking down its local +z axis (x right, y down).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub near: f64,
    pub far: f64,
    /// Row-major 4×4 rigid transform.
    pub cam_to_world: [f64; 16],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub direction: Vec3,
}

impl Camera {
    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::invalid("focal lengths must be positive"));
        }
        if !(self.near > 0.0 && self.near < self.far) {
            return Err(Error::invalid(format!(
                "need 0 < near < far, got near={} far={}",
                self.near, self.far
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("image size must be positive"));
        }
        if !self.cam_to_world.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("non-finite camera transform"));
        }
        let r = self.rotation();
        let err = (r * r.transpose() - Mat3::identity()).abs().max();
        if err > 1e-9 {
            return Err(Error::invalid(format!(
                "camera rotation not orthonormal (error {err:e})"
            )));
        }
        let m = &self.cam_to_world;
        if m[12] != 0.0 || m[13] != 0.0 || m[14] != 0.0 || m[15] != 1.0 {
            return Err(Error::invalid("camera transform bottom row must be 0 0 0 1"));
        }
        Ok(())
    }

    pub fn rotation(&self) -> Mat3 {
        let m = &self.cam_to_world;
        Mat3::new(m[0], m[1], m[2], m[4], m[5], m[6], m[8], m[9], m[10])
    }

    pub fn position(&self) -> Vec3 {
        let m = &self.cam_to_world;
        Vec3::new(m[3], m[7], m[11])
    }

    /// Builds a camera at `eye` looking at `target`, world `up` roughly up on
    /// screen.
    #[allow(clippy::too_many_arguments)]
    pub fn look_at(
        eye: Vec3,
        target: Vec3,
        up: Vec3,
        fov_y: f64,
        width: usize,
        height: usize,
        near: f64,
        far: f64,
    ) -> Result<Camera> {
        let forward = (target - eye).normalize();
        let right = forward.cross(&up);
        if right.norm() < 1e-9 {
            return Err(Error::invalid("look_at: up is parallel to view direction"));
        }
        let right = right.normalize();
        let down = forward.cross(&right);
        let f = 0.5 * height as f64 / (0.5 * fov_y).tan();
        let cam = Camera {
            fx: f,
            fy: f,
            cx: 0.5 * width as f64,
            cy: 0.5 * height as f64,
            width,
            height,
            near,
            far,
            cam_to_world: [
                right.x, down.x, forward.x, eye.x, //
                right.y, down.y, forward.y, eye.y, //
                right.z, down.z, forward.z, eye.z, //
                0.0, 0.0, 0.0, 1.0,
            ],
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Ray through the center of pixel `(px, py)`.
    pub fn ray(&self, px: usize, py: usize) -> Ray {
        let dir_cam = Vec3::new(
            (px as f64 + 0.5 - self.cx) / self.fx,
            (py as f64 + 0.5 - self.cy) / self.fy,
            1.0,
        );
        Ray {
            origin: self.position(),
            direction: (self.rotation() * dir_cam).normalize(),
        }
    }

    pub fn translated(&self, t: &Vec3) -> Camera {
        let mut c = self.clone();
        c.cam_to_world[3] += t.x;
        c.cam_to_world[7] += t.y;
        c.cam_to_world[11] += t.z;
        c
    }
}

//! UV-space editing: expression offsets, masked region transfer and blending.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::model::{UVAvatar, Vec3, POSE_DIM};

/// Which parameter groups an edit touches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ChannelSelector {
    /// Pose channels (center, rotation, radii).
    Geometry,
    /// Tri-plane payload.
    Texture,
    Both,
}

impl ChannelSelector {
    pub fn geometry(self) -> bool {
        matches!(self, ChannelSelector::Geometry | ChannelSelector::Both)
    }

    pub fn texture(self) -> bool {
        matches!(self, ChannelSelector::Texture | ChannelSelector::Both)
    }

    pub fn complement(self) -> Option<ChannelSelector> {
        match self {
            ChannelSelector::Geometry => Some(ChannelSelector::Texture),
            ChannelSelector::Texture => Some(ChannelSelector::Geometry),
            ChannelSelector::Both => None,
        }
    }
}

impl std::str::FromStr for ChannelSelector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "geo" | "geometry" => Ok(ChannelSelector::Geometry),
            "tex" | "texture" => Ok(ChannelSelector::Texture),
            "both" => Ok(ChannelSelector::Both),
            other => Err(Error::invalid(format!("unknown channel selector {other:?}"))),
        }
    }
}

/// Boolean texel mask over the UV grid plus a channel selector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UVMask {
    pub height: usize,
    pub width: usize,
    pub cells: Vec<bool>,
    pub selector: ChannelSelector,
}

impl UVMask {
    pub fn new(height: usize, width: usize, cells: Vec<bool>, selector: ChannelSelector) -> Result<Self> {
        if cells.len() != height * width {
            return Err(Error::invalid(format!(
                "mask has {} cells, expected {height}x{width}",
                cells.len()
            )));
        }
        Ok(UVMask {
            height,
            width,
            cells,
            selector,
        })
    }

    pub fn full(height: usize, width: usize, selector: ChannelSelector) -> Self {
        UVMask {
            height,
            width,
            cells: vec![true; height * width],
            selector,
        }
    }

    pub fn empty(height: usize, width: usize, selector: ChannelSelector) -> Self {
        UVMask {
            height,
            width,
            cells: vec![false; height * width],
            selector,
        }
    }

    pub fn get(&self, h: usize, w: usize) -> bool {
        self.cells[h * self.width + w]
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|c| **c).count()
    }

    pub fn check_avatar(&self, avatar: &UVAvatar) -> Result<()> {
        if (self.height, self.width) != (avatar.height, avatar.width) {
            return Err(Error::invalid(format!(
                "mask is {}x{} but avatar is {}x{}",
                self.height, self.width, avatar.height, avatar.width
            )));
        }
        Ok(())
    }

    /// Per-element mask over an unfolded `(H·S) × (W·S) × (9 + 3C)` tensor.
    pub fn element_mask(&self, res: usize, payload_channels: usize) -> Vec<bool> {
        let ch = POSE_DIM + 3 * payload_channels;
        let cols = self.width * res;
        let mut out = vec![false; self.height * res * cols * ch];
        for r in 0..self.height * res {
            for c in 0..cols {
                if !self.get(r / res, c / res) {
                    continue;
                }
                let o = (r * cols + c) * ch;
                if self.selector.geometry() {
                    out[o..o + POSE_DIM].fill(true);
                }
                if self.selector.texture() {
                    out[o + POSE_DIM..o + ch].fill(true);
                }
            }
        }
        out
    }
}

fn check_pair(a: &UVAvatar, b: &UVAvatar) -> Result<()> {
    if (a.height, a.width, a.res(), a.channels()) != (b.height, b.width, b.res(), b.channels()) {
        return Err(Error::invalid("avatars differ in grid or payload dimensions"));
    }
    Ok(())
}

/// Moves every center by `target − anchor` and adopts `target` as the new
/// anchors.
pub fn apply_expression_offset(avatar: &UVAvatar, target_vertices: &[Vec3]) -> Result<UVAvatar> {
    if target_vertices.len() != avatar.len() {
        return Err(Error::invalid(format!(
            "expected {} target vertices, got {}",
            avatar.len(),
            target_vertices.len()
        )));
    }
    if target_vertices.iter().any(|v| !v.iter().all(|c| c.is_finite())) {
        return Err(Error::invalid("target vertices must be finite"));
    }
    let mut out = avatar.clone();
    for ((pose, anchor), target) in out.poses.iter_mut().zip(out.anchors.iter_mut()).zip(target_vertices) {
        pose.center += target - *anchor;
        *anchor = *target;
    }
    Ok(out)
}

/// Copies the selected channels of masked texels from `source` into `target`.
/// Anchors follow the geometry.
pub fn region_transfer(target: &UVAvatar, source: &UVAvatar, mask: &UVMask) -> Result<UVAvatar> {
    check_pair(target, source)?;
    mask.check_avatar(target)?;
    let mut out = target.clone();
    for (i, _) in mask.cells.iter().enumerate().filter(|(_, c)| **c) {
        if mask.selector.geometry() {
            out.poses[i] = source.poses[i];
            out.anchors[i] = source.anchors[i];
            out.anchor_normals[i] = source.anchor_normals[i];
            out.anchor_scales[i] = source.anchor_scales[i];
        }
        if mask.selector.texture() {
            out.payloads[i] = source.payloads[i].clone();
        }
    }
    Ok(out)
}

/// Returns (A-shape + B-texture, B-shape + A-texture).
pub fn swap_shape_texture(a: &UVAvatar, b: &UVAvatar) -> Result<(UVAvatar, UVAvatar)> {
    let tex = UVMask::full(a.height, a.width, ChannelSelector::Texture);
    Ok((region_transfer(a, b, &tex)?, region_transfer(b, a, &tex)?))
}

fn wrap_angle(d: f64) -> f64 {
    if (-PI..=PI).contains(&d) {
        return d;
    }
    let w = (d + PI).rem_euclid(2.0 * PI) - PI;
    if w == -PI {
        PI
    } else {
        w
    }
}

fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}

/// Linear blend of the selected channels; Euler angles take the shortest
/// way around.
pub fn interpolate(a: &UVAvatar, b: &UVAvatar, weight: f64, selector: ChannelSelector) -> Result<UVAvatar> {
    check_pair(a, b)?;
    if !(0.0..=1.0).contains(&weight) {
        return Err(Error::invalid(format!("interpolation weight {weight} outside [0, 1]")));
    }
    let mut out = a.clone();
    if weight == 0.0 {
        return Ok(out);
    }
    if weight == 1.0 {
        return region_transfer(a, b, &UVMask::full(a.height, a.width, selector));
    }
    for i in 0..a.len() {
        if selector.geometry() {
            let (pa, pb) = (&a.poses[i], &b.poses[i]);
            let p = &mut out.poses[i];
            p.center = pa.center.zip_map(&pb.center, |x, y| lerp(x, y, weight));
            p.radii = pa.radii.zip_map(&pb.radii, |x, y| lerp(x, y, weight));
            p.rotation = pa.rotation.zip_map(&pb.rotation, |x, y| x + wrap_angle(y - x) * weight);
            out.anchors[i] = a.anchors[i].zip_map(&b.anchors[i], |x, y| lerp(x, y, weight));
            out.anchor_normals[i] = a.anchor_normals[i].zip_map(&b.anchor_normals[i], |x, y| lerp(x, y, weight));
            out.anchor_scales[i] = lerp(a.anchor_scales[i], b.anchor_scales[i], weight);
        }
        if selector.texture() {
            let pb = b.payloads[i].data();
            for (v, y) in out.payloads[i].data_mut().iter_mut().zip(pb) {
                *v = lerp(*v, *y, weight);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::checks::random_grad_scene;

    fn pair() -> (UVAvatar, UVAvatar) {
        (
            random_grad_scene(1, 6, 3).unwrap().avatar,
            random_grad_scene(2, 6, 3).unwrap().avatar,
        )
    }

    #[test]
    fn zero_offset_is_identity() {
        let (a, _) = pair();
        assert_eq!(apply_expression_offset(&a, &a.anchors).unwrap(), a);
    }

    #[test]
    fn uniform_offset_shifts_centers() {
        let (a, _) = pair();
        let d = Vec3::new(0.01, -0.02, 0.03);
        let target: Vec<Vec3> = a.anchors.iter().map(|v| v + d).collect();
        let out = apply_expression_offset(&a, &target).unwrap();
        for (p, q) in out.poses.iter().zip(&a.poses) {
            assert!((p.center - q.center - d).norm() < 1e-15);
            assert_eq!(p.rotation, q.rotation);
        }
        assert_eq!(out.payloads, a.payloads);
        assert!(apply_expression_offset(&a, &target[1..]).is_err());
    }

    #[test]
    fn transfer_respects_mask_and_selector() {
        let (a, b) = pair();
        let mut cells = vec![false; a.len()];
        cells[1] = true;
        let mask = UVMask::new(a.height, a.width, cells, ChannelSelector::Geometry).unwrap();
        let out = region_transfer(&a, &b, &mask).unwrap();
        assert_eq!(out.payloads, a.payloads);
        assert_eq!(out.poses[1], b.poses[1]);
        assert_eq!(out.anchors[1], b.anchors[1]);
        assert_eq!(out.poses[0], a.poses[0]);
        let empty = UVMask::empty(a.height, a.width, ChannelSelector::Both);
        assert_eq!(region_transfer(&a, &b, &empty).unwrap(), a);
        let full = UVMask::full(a.height, a.width, ChannelSelector::Both);
        assert_eq!(region_transfer(&a, &b, &full).unwrap(), b);
    }

    #[test]
    fn swap_is_an_involution() {
        let (a, b) = pair();
        let (ab, ba) = swap_shape_texture(&a, &b).unwrap();
        assert_eq!(ab.poses, a.poses);
        assert_eq!(ab.payloads, b.payloads);
        let (a2, b2) = swap_shape_texture(&ab, &ba).unwrap();
        assert_eq!((a2, b2), (a.clone(), b));
        let (x, y) = swap_shape_texture(&a, &a).unwrap();
        assert_eq!((x, y), (a.clone(), a));
    }

    #[test]
    fn interpolation_endpoints_and_midpoint() {
        let (a, b) = pair();
        assert_eq!(interpolate(&a, &b, 0.0, ChannelSelector::Both).unwrap(), a);
        let one = interpolate(&a, &b, 1.0, ChannelSelector::Texture).unwrap();
        assert_eq!(one.payloads, b.payloads);
        assert_eq!(one.poses, a.poses);
        let mid = interpolate(&a, &b, 0.5, ChannelSelector::Geometry).unwrap();
        for i in 0..a.len() {
            let m = (a.poses[i].center + b.poses[i].center) / 2.0;
            assert!((mid.poses[i].center - m).norm() < 1e-15);
        }
        assert!(interpolate(&a, &b, 1.5, ChannelSelector::Both).is_err());
    }

    #[test]
    fn angle_wrapping_takes_short_way() {
        assert!((wrap_angle(1.9 * PI) + 0.1 * PI).abs() < 1e-12);
        assert!((wrap_angle(-1.9 * PI) - 0.1 * PI).abs() < 1e-12);
        assert_eq!(wrap_angle(0.3), 0.3);
    }

    #[test]
    fn element_mask_layout() {
        let mut cells = vec![false; 4];
        cells[3] = true;
        let m = UVMask::new(2, 2, cells, ChannelSelector::Geometry).unwrap();
        let e = m.element_mask(2, 1);
        let ch = POSE_DIM + 3;
        let at = |r: usize, c: usize, k: usize| e[(r * 4 + c) * ch + k];
        assert!(at(2, 2, 0) && at(3, 3, 8) && !at(3, 3, 9));
        assert!(!at(0, 0, 0) && !at(1, 2, 0));
        assert_eq!(e.iter().filter(|v| **v).count(), 4 * POSE_DIM);
    }
}

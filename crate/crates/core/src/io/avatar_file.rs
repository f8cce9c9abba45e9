use std::path::Path;

use serde::{Deserialize, Serialize};

use super::write_atomic;
use crate::error::{Error, Result};
use crate::model::{GaussianPose, TriPlanePayload, UVAvatar, Vec3};

pub const AVATAR_MAGIC: &[u8; 4] = b"GUV1";
pub const AVATAR_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[allow(non_snake_case)]
struct Header {
    H: usize,
    W: usize,
    Sx: usize,
    Sy: usize,
    C: usize,
    version: u32,
}

/// Serialized bytes of an avatar; every scalar is rounded to `f32`.
pub fn encode_avatar(avatar: &UVAvatar) -> Result<Vec<u8>> {
    avatar.validate()?;
    let header = serde_json::to_vec(&Header {
        H: avatar.height,
        W: avatar.width,
        Sx: avatar.res(),
        Sy: avatar.res(),
        C: avatar.channels(),
        version: AVATAR_VERSION,
    })?;
    let n = avatar.len();
    let body = 10 * n + 3 * n * avatar.res() * avatar.res() * avatar.channels() + n;
    let mut out = Vec::with_capacity(8 + header.len() + 4 * body);
    out.extend_from_slice(AVATAR_MAGIC);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    let mut put = |v: f64| out.extend_from_slice(&(v as f32).to_le_bytes());
    let vecs = |sel: fn(&GaussianPose) -> Vec3| avatar.poses.iter().map(sel).collect::<Vec<_>>();
    for group in [vecs(|p| p.center), vecs(|p| p.rotation), vecs(|p| p.radii)] {
        group.iter().flat_map(|v| v.iter().copied()).for_each(&mut put);
    }
    avatar.payloads.iter().flat_map(|p| p.data().iter().copied()).for_each(&mut put);
    for group in [&avatar.anchors, &avatar.anchor_normals] {
        group.iter().flat_map(|v| v.iter().copied()).for_each(&mut put);
    }
    avatar.anchor_scales.iter().copied().for_each(&mut put);
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Reader<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::CorruptFile {
                path: self.path.to_path_buf(),
                offset: self.bytes.len() as u64,
                detail: format!("truncated while reading {what}: needed {n} bytes at offset {}", self.pos),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn floats(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let start = self.pos;
        let raw = self.take(4 * n, what)?;
        let vals: Vec<f64> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        if let Some(i) = vals.iter().position(|v| !v.is_finite()) {
            return Err(Error::CorruptFile {
                path: self.path.to_path_buf(),
                offset: (start + 4 * i) as u64,
                detail: format!("non-finite value in {what}"),
            });
        }
        Ok(vals)
    }

    fn vec3s(&mut self, n: usize, what: &str) -> Result<Vec<Vec3>> {
        Ok(self.floats(3 * n, what)?.chunks_exact(3).map(Vec3::from_column_slice).collect())
    }
}

/// Parses avatar bytes; `path` only labels errors.
pub fn decode_avatar(bytes: &[u8], path: &Path) -> Result<UVAvatar> {
    let format = |detail: String| Error::Format {
        path: path.to_path_buf(),
        detail,
    };
    let mut r = Reader { bytes, pos: 0, path };
    if r.take(4, "magic")? != AVATAR_MAGIC {
        return Err(format("missing GUV1 magic".into()));
    }
    let len = u32::from_le_bytes(r.take(4, "header length")?.try_into().expect("4 bytes")) as usize;
    let header: Header = serde_json::from_slice(r.take(len, "header")?)
        .map_err(|e| format(format!("bad header: {e}")))?;
    if header.version != AVATAR_VERSION {
        return Err(Error::UnsupportedVersion {
            found: header.version,
            expected: AVATAR_VERSION,
        });
    }
    if header.Sx != header.Sy {
        return Err(format(format!("non-square payload planes {}x{}", header.Sx, header.Sy)));
    }
    let (n, res, ch) = (header.H * header.W, header.Sx, header.C);
    if n == 0 || res == 0 || ch == 0 {
        return Err(format("empty dimensions in header".into()));
    }
    let centers = r.vec3s(n, "centers")?;
    let rotations = r.vec3s(n, "rotations")?;
    let radii = r.vec3s(n, "radii")?;
    let per = 3 * res * res * ch;
    let payload_flat = r.floats(n * per, "payloads")?;
    let anchors = r.vec3s(n, "anchors")?;
    let anchor_normals = r.vec3s(n, "anchor normals")?;
    let anchor_scales = r.floats(n, "anchor scales")?;
    if r.pos != bytes.len() {
        return Err(Error::CorruptFile {
            path: path.to_path_buf(),
            offset: r.pos as u64,
            detail: format!("{} trailing bytes", bytes.len() - r.pos),
        });
    }
    let avatar = UVAvatar {
        height: header.H,
        width: header.W,
        poses: (0..n)
            .map(|i| GaussianPose {
                center: centers[i],
                rotation: rotations[i],
                radii: radii[i],
            })
            .collect(),
        payloads: payload_flat
            .chunks_exact(per)
            .map(|c| TriPlanePayload::from_vec(res, ch, c.to_vec()))
            .collect::<Result<_>>()?,
        anchors,
        anchor_normals,
        anchor_scales,
    };
    avatar.validate().map_err(|e| format(e.to_string()))?;
    Ok(avatar)
}

pub fn save_avatar(avatar: &UVAvatar, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &encode_avatar(avatar)?)
}

pub fn load_avatar(path: impl AsRef<Path>) -> Result<UVAvatar> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_avatar(&bytes, path)
}

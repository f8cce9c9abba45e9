//! File formats: avatars, rasters, anchors, cameras and toy datasets.

mod avatar_file;
mod dataset;
mod image;
mod text;

use std::io::Write;
use std::path::Path;

pub use avatar_file::{decode_avatar, encode_avatar, load_avatar, save_avatar, AVATAR_MAGIC, AVATAR_VERSION};
pub use dataset::{
    generate_toy_dataset, load_dataset, load_reference, passthrough_mlp, toy_anchors, toy_cameras, toy_reference,
    toy_scene, Dataset, ToyKind, ToyScene, ToySpec, SPHERE_RADIUS,
};
pub use image::{
    decode_pfm, decode_pnm, encode_pfm, encode_pgm, encode_ppm, load_mask, quantize, read_pfm, read_pnm, save_mask,
    write_pfm, write_pgm, write_ppm, Pnm,
};
pub use text::{
    encode_anchor_grid, load_anchor_grid, load_cameras, load_mlp, mlp_sidecar, parse_anchor_grid, save_anchor_grid,
    save_cameras, save_mlp,
};

use crate::error::{Error, Result};

/// Writes through a temporary file in the target directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

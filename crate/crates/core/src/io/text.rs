use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::write_atomic;
use crate::error::{Error, Result};
use crate::model::{AnchorGrid, Camera, Vec3};
use crate::render::RenderMlp;

fn read_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Text layout: a `H W` line, then one `px py pz nx ny nz scale` line per
/// texel in row-major order. `#` starts a comment.
pub fn encode_anchor_grid(grid: &AnchorGrid) -> Result<String> {
    grid.validate()?;
    let mut s = format!("# anchors: px py pz nx ny nz scale\n{} {}\n", grid.height, grid.width);
    for ((p, n), sc) in grid.positions.iter().zip(&grid.normals).zip(&grid.scales) {
        writeln!(s, "{} {} {} {} {} {} {}", p.x, p.y, p.z, n.x, n.y, n.z, sc).expect("string write");
    }
    Ok(s)
}

pub fn parse_anchor_grid(text: &str, path: &Path) -> Result<AnchorGrid> {
    let format = |line: usize, detail: String| Error::Format {
        path: path.to_path_buf(),
        detail: format!("line {line}: {detail}"),
    };
    let mut rows = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty());
    let (ln, dims) = rows.next().ok_or_else(|| format(0, "empty anchor file".into()))?;
    let dims: Vec<usize> = dims
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| format(ln, format!("bad dimension {t:?}"))))
        .collect::<Result<_>>()?;
    let [height, width] = dims[..] else {
        return Err(format(ln, "expected `H W`".into()));
    };
    let n = height * width;
    let mut grid = AnchorGrid {
        height,
        width,
        positions: Vec::with_capacity(n),
        normals: Vec::with_capacity(n),
        scales: Vec::with_capacity(n),
    };
    for (ln, line) in rows {
        let v: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| format(ln, format!("bad number {t:?}"))))
            .collect::<Result<_>>()?;
        if v.len() != 7 {
            return Err(format(ln, format!("expected 7 values, got {}", v.len())));
        }
        if grid.scales.len() == n {
            return Err(format(ln, format!("more than {n} anchor rows")));
        }
        grid.positions.push(Vec3::new(v[0], v[1], v[2]));
        grid.normals.push(Vec3::new(v[3], v[4], v[5]));
        grid.scales.push(v[6]);
    }
    grid.validate().map_err(|e| Error::Format {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    Ok(grid)
}

pub fn save_anchor_grid(grid: &AnchorGrid, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), encode_anchor_grid(grid)?.as_bytes())
}

pub fn load_anchor_grid(path: impl AsRef<Path>) -> Result<AnchorGrid> {
    let path = path.as_ref();
    parse_anchor_grid(&read_string(path)?, path)
}

pub fn save_cameras(cameras: &[Camera], path: impl AsRef<Path>) -> Result<()> {
    for c in cameras {
        c.validate()?;
    }
    let mut s = serde_json::to_string_pretty(cameras)?;
    s.push('\n');
    write_atomic(path.as_ref(), s.as_bytes())
}

pub fn load_cameras(path: impl AsRef<Path>) -> Result<Vec<Camera>> {
    let path = path.as_ref();
    let cams: Vec<Camera> = serde_json::from_str(&read_string(path)?).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    for (i, c) in cams.iter().enumerate() {
        c.validate().map_err(|e| Error::Format {
            path: path.to_path_buf(),
            detail: format!("camera {i}: {e}"),
        })?;
    }
    Ok(cams)
}

/// `<avatar>.mlp.json` next to an avatar file.
pub fn mlp_sidecar(avatar_path: impl AsRef<Path>) -> PathBuf {
    let mut s = avatar_path.as_ref().as_os_str().to_owned();
    s.push(".mlp.json");
    PathBuf::from(s)
}

pub fn save_mlp(mlp: &RenderMlp, path: impl AsRef<Path>) -> Result<()> {
    mlp.validate()?;
    write_atomic(path.as_ref(), serde_json::to_string(mlp)?.as_bytes())
}

pub fn load_mlp(path: impl AsRef<Path>) -> Result<RenderMlp> {
    let path = path.as_ref();
    let mlp: RenderMlp = serde_json::from_str(&read_string(path)?).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    mlp.validate()?;
    Ok(mlp)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> AnchorGrid {
        AnchorGrid {
            height: 1,
            width: 2,
            positions: vec![Vec3::new(0.1, 0.2, 0.3), Vec3::new(-1.0 / 3.0, 0.0, 1e-9)],
            normals: vec![Vec3::z(), Vec3::new(0.6, 0.8, 0.0)],
            scales: vec![0.05, 0.07],
        }
    }

    #[test]
    fn anchors_round_trip_exactly() {
        let g = grid();
        let back = parse_anchor_grid(&encode_anchor_grid(&g).unwrap(), Path::new("a")).unwrap();
        assert_eq!(back.positions, g.positions);
        assert_eq!(back.normals, g.normals);
        assert_eq!(back.scales, g.scales);
    }

    #[test]
    fn nan_names_the_texel() {
        let text = "1 2\n0 0 0 0 0 1 0.1\n0 NaN 0 0 0 1 0.1\n";
        let e = parse_anchor_grid(text, Path::new("a")).unwrap_err().to_string();
        assert!(e.contains("(0, 1)"), "{e}");
    }

    #[test]
    fn non_unit_normal_rejected() {
        let text = "1 1\n0 0 0 0 0 1.1 0.1\n";
        assert!(parse_anchor_grid(text, Path::new("a")).is_err());
    }

    #[test]
    fn sidecar_name() {
        assert_eq!(mlp_sidecar("out/a.guv"), PathBuf::from("out/a.guv.mlp.json"));
    }
}

use std::path::Path;

use super::write_atomic;
use crate::edit::{ChannelSelector, UVMask};
use crate::error::{Error, Result};

/// An 8-bit PNM raster (P5 or P6) with the scale declared in its comments.
#[derive(Debug, Clone, PartialEq)]
pub struct Pnm {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    /// Value represented by byte 255.
    pub scale: f64,
    pub bytes: Vec<u8>,
}

impl Pnm {
    /// Values mapped back through the scale.
    pub fn values(&self) -> Vec<f64> {
        self.bytes.iter().map(|b| *b as f64 / 255.0 * self.scale).collect()
    }
}

/// `round(clamp(v / scale, 0, 1) · 255)`.
pub fn quantize(v: f64, scale: f64) -> u8 {
    let x = if v.is_nan() { 0.0 } else { (v / scale).clamp(0.0, 1.0) };
    (x * 255.0).round() as u8
}

fn check_len(width: usize, height: usize, channels: usize, len: usize) -> Result<()> {
    if width == 0 || height == 0 || len != width * height * channels {
        return Err(Error::invalid(format!(
            "image {width}x{height}x{channels} does not match {len} values"
        )));
    }
    Ok(())
}

pub fn encode_ppm(width: usize, height: usize, rgb: &[f64]) -> Result<Vec<u8>> {
    check_len(width, height, 3, rgb.len())?;
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.extend(rgb.iter().map(|v| quantize(*v, 1.0)));
    Ok(out)
}

pub fn encode_pgm(width: usize, height: usize, values: &[f64], scale: f64) -> Result<Vec<u8>> {
    check_len(width, height, 1, values.len())?;
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::invalid(format!("PGM scale must be positive, got {scale}")));
    }
    let mut out = format!("P5\n# scale {scale}\n{width} {height}\n255\n").into_bytes();
    out.extend(values.iter().map(|v| quantize(*v, scale)));
    Ok(out)
}

pub fn write_ppm(path: impl AsRef<Path>, width: usize, height: usize, rgb: &[f64]) -> Result<()> {
    write_atomic(path.as_ref(), &encode_ppm(width, height, rgb)?)
}

pub fn write_pgm(path: impl AsRef<Path>, width: usize, height: usize, values: &[f64], scale: f64) -> Result<()> {
    write_atomic(path.as_ref(), &encode_pgm(width, height, values, scale)?)
}

pub fn decode_pnm(bytes: &[u8], path: &Path) -> Result<Pnm> {
    let format = |detail: String| Error::Format {
        path: path.to_path_buf(),
        detail,
    };
    let mut pos = 0;
    let mut scale = 1.0;
    let mut tokens = Vec::new();
    while tokens.len() < 4 {
        match bytes.get(pos) {
            None => return Err(format("truncated header".into())),
            Some(b'#') => {
                let end = bytes[pos..].iter().position(|b| *b == b'\n').map_or(bytes.len(), |e| pos + e);
                let comment = String::from_utf8_lossy(&bytes[pos + 1..end]);
                if let Some(s) = comment.trim().strip_prefix("scale ") {
                    scale = s.trim().parse().map_err(|_| format(format!("bad scale comment {s:?}")))?;
                }
                pos = end;
            }
            Some(b) if b.is_ascii_whitespace() => pos += 1,
            Some(_) => {
                let end = bytes[pos..]
                    .iter()
                    .position(|b| b.is_ascii_whitespace())
                    .map_or(bytes.len(), |e| pos + e);
                tokens.push(String::from_utf8_lossy(&bytes[pos..end]).into_owned());
                pos = end;
            }
        }
    }
    pos += 1;
    let channels = match tokens[0].as_str() {
        "P5" => 1,
        "P6" => 3,
        other => return Err(format(format!("unsupported PNM type {other:?}"))),
    };
    let num = |s: &str| s.parse::<usize>().map_err(|_| format(format!("bad header number {s:?}")));
    let (width, height, maxval) = (num(&tokens[1])?, num(&tokens[2])?, num(&tokens[3])?);
    if maxval != 255 {
        return Err(format(format!("only 8-bit rasters are supported, maxval {maxval}")));
    }
    let need = width * height * channels;
    let body = bytes.get(pos..).unwrap_or(&[]);
    if body.len() < need {
        return Err(Error::CorruptFile {
            path: path.to_path_buf(),
            offset: bytes.len() as u64,
            detail: format!("pixel data truncated: {} of {need} bytes", body.len()),
        });
    }
    Ok(Pnm {
        width,
        height,
        channels,
        scale,
        bytes: body[..need].to_vec(),
    })
}

pub fn read_pnm(path: impl AsRef<Path>) -> Result<Pnm> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pnm(&bytes, path)
}

/// Grayscale texel mask: bytes `>= 128` are inside.
pub fn load_mask(path: impl AsRef<Path>, selector: ChannelSelector) -> Result<UVMask> {
    let path = path.as_ref();
    let img = read_pnm(path)?;
    if img.channels != 1 {
        return Err(Error::Format {
            path: path.to_path_buf(),
            detail: "mask must be a grayscale PGM".into(),
        });
    }
    UVMask::new(img.height, img.width, img.bytes.iter().map(|b| *b >= 128).collect(), selector)
}

pub fn save_mask(path: impl AsRef<Path>, mask: &UVMask) -> Result<()> {
    let v: Vec<f64> = mask.cells.iter().map(|c| if *c { 1.0 } else { 0.0 }).collect();
    write_pgm(path, mask.width, mask.height, &v, 1.0)
}

/// Little-endian single-channel PFM, rows stored bottom to top.
pub fn encode_pfm(width: usize, height: usize, values: &[f64]) -> Result<Vec<u8>> {
    check_len(width, height, 1, values.len())?;
    let mut out = format!("Pf\n{width} {height}\n-1.0\n").into_bytes();
    for row in (0..height).rev() {
        for v in &values[row * width..(row + 1) * width] {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn write_pfm(path: impl AsRef<Path>, width: usize, height: usize, values: &[f64]) -> Result<()> {
    write_atomic(path.as_ref(), &encode_pfm(width, height, values)?)
}

pub fn decode_pfm(bytes: &[u8], path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    let format = |detail: &str| Error::Format {
        path: path.to_path_buf(),
        detail: detail.to_string(),
    };
    let mut lines = Vec::new();
    let mut pos = 0;
    while lines.len() < 3 {
        let end = bytes[pos..]
            .iter()
            .position(|b| *b == b'\n')
            .ok_or_else(|| format("truncated PFM header"))?;
        lines.push(String::from_utf8_lossy(&bytes[pos..pos + end]).trim().to_string());
        pos += end + 1;
    }
    if lines[0] != "Pf" {
        return Err(format("only grayscale PFM (Pf) is supported"));
    }
    let dims: Vec<usize> = lines[1]
        .split_whitespace()
        .map(|s| s.parse().map_err(|_| format("bad PFM dimensions")))
        .collect::<Result<_>>()?;
    let [width, height] = dims[..] else {
        return Err(format("bad PFM dimensions"));
    };
    let endian: f64 = lines[2].parse().map_err(|_| format("bad PFM scale"))?;
    if endian >= 0.0 {
        return Err(format("big-endian PFM is not supported"));
    }
    let need = 4 * width * height;
    if bytes.len() - pos < need {
        return Err(Error::CorruptFile {
            path: path.to_path_buf(),
            offset: bytes.len() as u64,
            detail: format!("PFM body truncated: {} of {need} bytes", bytes.len() - pos),
        });
    }
    let mut values = vec![0.0; width * height];
    for (k, c) in bytes[pos..pos + need].chunks_exact(4).enumerate() {
        let (row, col) = (height - 1 - k / width, k % width);
        values[row * width + col] = f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64;
    }
    Ok((width, height, values))
}

pub fn read_pfm(path: impl AsRef<Path>) -> Result<(usize, usize, Vec<f64>)> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pfm(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn white_ppm_bytes() {
        let b = encode_ppm(2, 2, &[1.0; 12]).unwrap();
        assert_eq!(&b[..11], b"P6\n2 2\n255\n");
        assert_eq!(&b[11..], &[0xFF; 12]);
    }

    #[test]
    fn rounding_rule() {
        assert_eq!(quantize(0.5, 1.0), 128);
        assert_eq!(quantize(0.0, 1.0), 0);
        assert_eq!(quantize(-3.0, 1.0), 0);
        assert_eq!(quantize(7.0, 1.0), 255);
        assert_eq!(quantize(1.5, 3.0), 128);
    }

    #[test]
    fn pgm_scale_survives() {
        let p = Path::new("mem");
        let b = encode_pgm(3, 1, &[0.0, 1.25, 2.5], 2.5).unwrap();
        let img = decode_pnm(&b, p).unwrap();
        assert_eq!((img.width, img.height, img.channels, img.scale), (3, 1, 1, 2.5));
        assert_eq!(img.bytes, vec![0, 128, 255]);
        assert_eq!(img.values()[2], 2.5);
    }

    #[test]
    fn pfm_round_trip() {
        let v: Vec<f64> = (0..6).map(|i| (i as f32 * 0.37) as f64).collect();
        let b = encode_pfm(3, 2, &v).unwrap();
        assert_eq!(decode_pfm(&b, Path::new("mem")).unwrap(), (3, 2, v));
    }

    #[test]
    fn truncated_raster_reports_offset() {
        let b = encode_ppm(2, 2, &[0.5; 12]).unwrap();
        match decode_pnm(&b[..15], Path::new("mem")) {
            Err(Error::CorruptFile { offset, .. }) => assert_eq!(offset, 15),
            other => panic!("{other:?}"),
        }
    }
}

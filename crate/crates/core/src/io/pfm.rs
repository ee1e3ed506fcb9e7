//! Portable Float Map (colour `PF` only).
//!
//! Header: `PF\n<width> <height>\n<scale>\n`, followed by `width·height·3`
//! 32-bit floats, rows stored bottom-up. A negative scale means little-endian.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::{NormalMap, RadianceImage, ScalarMap};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Endian {
    #[default]
    Little,
    Big,
}

pub fn encode_pfm(width: usize, height: usize, data: &[f32], endian: Endian) -> Vec<u8> {
    assert_eq!(data.len(), width * height * 3);
    let scale = match endian {
        Endian::Little => "-1.0",
        Endian::Big => "1.0",
    };
    let mut out = format!("PF\n{width} {height}\n{scale}\n").into_bytes();
    out.reserve(data.len() * 4);
    for row in data.chunks_exact(width * 3).rev() {
        for v in row {
            match endian {
                Endian::Little => out.extend_from_slice(&v.to_le_bytes()),
                Endian::Big => out.extend_from_slice(&v.to_be_bytes()),
            }
        }
    }
    out
}

/// Parses a colour PFM into top-down, row-major samples without validating values.
pub fn decode_pfm(bytes: &[u8], path: &Path) -> Result<(usize, usize, Vec<f32>)> {
    let bad = |reason: String| Error::Pfm {
        path: path.to_path_buf(),
        reason,
    };
    let mut pos = 0;
    let mut token = || -> Result<String> {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header".into()));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    match token()?.as_str() {
        "PF" => {}
        "Pf" => return Err(bad("greyscale PFM is not supported".into())),
        other => return Err(bad(format!("unknown magic {other:?}"))),
    }
    let dim = |t: String, what: &str| -> Result<usize> {
        t.parse::<usize>()
            .ok()
            .filter(|&v| v > 0)
            .ok_or_else(|| bad(format!("invalid {what} {t:?}")))
    };
    let width = dim(token()?, "width")?;
    let height = dim(token()?, "height")?;
    let scale_tok = token()?;
    let scale: f64 = scale_tok
        .parse()
        .ok()
        .filter(|s: &f64| s.is_finite() && *s != 0.0)
        .ok_or_else(|| bad(format!("invalid scale {scale_tok:?}")))?;
    // exactly one whitespace byte separates the header from the raster
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(bad("truncated header".into()));
    }
    pos += 1;

    let count = width
        .checked_mul(height)
        .and_then(|p| p.checked_mul(3))
        .ok_or_else(|| bad("dimensions overflow".into()))?;
    let raster = &bytes[pos..];
    if raster.len() < count * 4 {
        return Err(bad(format!(
            "truncated raster: expected {} bytes, found {}",
            count * 4,
            raster.len()
        )));
    }
    let little = scale < 0.0;
    let mut data = vec![0.0f32; count];
    let row_len = width * 3;
    for (r, src) in raster[..count * 4].chunks_exact(row_len * 4).enumerate() {
        let y = height - 1 - r;
        let dst = &mut data[y * row_len..(y + 1) * row_len];
        for (d, b) in dst.iter_mut().zip(src.chunks_exact(4)) {
            let b = [b[0], b[1], b[2], b[3]];
            *d = if little { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) };
        }
    }
    Ok((width, height, data))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads a radiance image, rejecting NaN, infinite and negative samples.
pub fn read_pfm(path: impl AsRef<Path>) -> Result<RadianceImage> {
    let path = path.as_ref();
    let (w, h, data) = decode_pfm(&read_bytes(path)?, path)?;
    RadianceImage::from_vec(w, h, data)
}

pub fn write_pfm(image: &RadianceImage, path: impl AsRef<Path>) -> Result<()> {
    write_pfm_with(image, path, Endian::Little)
}

pub fn write_pfm_with(image: &RadianceImage, path: impl AsRef<Path>, endian: Endian) -> Result<()> {
    let (w, h) = image.dims();
    write_bytes(path.as_ref(), &encode_pfm(w, h, image.as_slice(), endian))
}

/// Normal maps carry signed components, so only finiteness is checked.
pub fn read_normal_map(path: impl AsRef<Path>) -> Result<NormalMap> {
    let path = path.as_ref();
    let (w, h, data) = decode_pfm(&read_bytes(path)?, path)?;
    NormalMap::from_vec(w, h, data)
}

pub fn write_normal_map(normal: &NormalMap, path: impl AsRef<Path>) -> Result<()> {
    let (w, h) = normal.dims();
    write_bytes(path.as_ref(), &encode_pfm(w, h, normal.as_slice(), Endian::Little))
}

/// Scalar maps are stored as grey colour PFMs; the first channel is read back.
pub fn read_scalar_map(path: impl AsRef<Path>) -> Result<ScalarMap> {
    let image = read_pfm(path)?;
    let (w, h) = image.dims();
    ScalarMap::from_vec(w, h, image.as_slice().chunks_exact(3).map(|p| p[0]).collect())
}

pub fn write_scalar_map(map: &ScalarMap, path: impl AsRef<Path>) -> Result<()> {
    write_pfm(&map.to_image()?, path)
}

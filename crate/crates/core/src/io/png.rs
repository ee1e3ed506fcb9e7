//! 8-bit sRGB previews of radiance images.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::RadianceImage;
use crate::metrics::tonemap;

/// sRGB transfer function on `[0, 1]`.
pub fn srgb_encode(v: f64) -> f64 {
    if v <= 0.003_130_8 {
        12.92 * v
    } else {
        1.055 * v.powf(1.0 / 2.4) - 0.055
    }
}

/// Tonemapped, gamma-encoded bytes in RGB order.
pub fn tonemap_bytes(image: &RadianceImage, exposure: f64) -> Result<Vec<u8>> {
    if !(exposure > 0.0) {
        return Err(Error::Parameter(format!("exposure {exposure} must be > 0")));
    }
    Ok(image
        .as_slice()
        .iter()
        .map(|&x| {
            let t = if exposure.is_infinite() {
                if x > 0.0 { 1.0 } else { 0.0 }
            } else {
                tonemap(x as f64, exposure)
            };
            (255.0 * srgb_encode(t.clamp(0.0, 1.0))).round() as u8
        })
        .collect())
}

pub fn write_png_tonemapped(image: &RadianceImage, path: impl AsRef<Path>, exposure: f64) -> Result<()> {
    let path = path.as_ref();
    let bytes = tonemap_bytes(image, exposure)?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), image.width() as u32, image.height() as u32);
    encoder.set_color(png::ColorType::Rgb);
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder.write_header().map_err(|e| Error::Png(e.to_string()))?;
    writer.write_image_data(&bytes).map_err(|e| Error::Png(e.to_string()))?;
    writer.finish().map_err(|e| Error::Png(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn decode(path: &Path) -> (u32, u32, Vec<u8>) {
        let decoder = png::Decoder::new(std::io::BufReader::new(File::open(path).unwrap()));
        let mut reader = decoder.read_info().unwrap();
        let mut buf = vec![0; reader.output_buffer_size().unwrap()];
        let info = reader.next_frame(&mut buf).unwrap();
        buf.truncate(info.buffer_size());
        (info.width, info.height, buf)
    }

    #[test]
    fn black_image_is_zero() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("black.png");
        write_png_tonemapped(&RadianceImage::new(4, 3, [0.0; 3]).unwrap(), &p, 1.0).unwrap();
        let (w, h, bytes) = decode(&p);
        assert_eq!((w, h), (4, 3));
        assert!(bytes.iter().all(|&b| b == 0));
    }

    #[test]
    fn exposure_one_golden_value() {
        let img = RadianceImage::new(2, 2, [1.0; 3]).unwrap();
        // round(255 · srgb(1 − 1/e)), evaluated by hand
        assert!(tonemap_bytes(&img, 1.0).unwrap().iter().all(|&b| b == 208));
    }

    #[test]
    fn huge_exposure_saturates() {
        let img = RadianceImage::from_fn(3, 1, |x, _| [0.01 * (x + 1) as f32; 3]).unwrap();
        for e in [1e9, f64::INFINITY] {
            assert!(tonemap_bytes(&img, e).unwrap().iter().all(|&b| b == 255));
        }
        assert!(tonemap_bytes(&img, 0.0).is_err());
    }
}

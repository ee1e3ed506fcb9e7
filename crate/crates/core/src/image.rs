//! Raster types shared by every pipeline stage.
//!
//! All rasters are row-major with the origin at the top-left pixel. That
//! ordering is also what the PFM reader normalizes to, so pixel indices in
//! error messages and manifests always count from the top-left.

use crate::error::{Error, Result};
use crate::vec3::Vec3;

/// Linear RGB triple.
pub type Rgb = [f32; 3];

/// Rec. 709 luminance weights.
pub const LUMINANCE_WEIGHTS: [f64; 3] = [0.2126, 0.7152, 0.0722];

#[inline]
pub fn luminance(rgb: Rgb) -> f64 {
    LUMINANCE_WEIGHTS[0] * rgb[0] as f64
        + LUMINANCE_WEIGHTS[1] * rgb[1] as f64
        + LUMINANCE_WEIGHTS[2] * rgb[2] as f64
}

#[inline]
pub fn luminance64(rgb: [f64; 3]) -> f64 {
    LUMINANCE_WEIGHTS[0] * rgb[0] + LUMINANCE_WEIGHTS[1] * rgb[1] + LUMINANCE_WEIGHTS[2] * rgb[2]
}

fn check_dims(width: usize, height: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::Dimension { width, height });
    }
    Ok(())
}

/// Linear HDR radiance raster with three channels.
///
/// Every stored sample is finite and non-negative; constructors enforce it.
#[derive(Clone, Debug, PartialEq)]
pub struct RadianceImage {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl RadianceImage {
    pub fn new(width: usize, height: usize, fill: Rgb) -> Result<Self> {
        check_dims(width, height)?;
        if let Some(c) = fill.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidPixel {
                index: 0,
                x: 0,
                y: 0,
                channel: c,
                value: fill[c],
            });
        }
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&fill);
        }
        Ok(RadianceImage {
            width,
            height,
            data,
        })
    }

    /// Wraps interleaved RGB samples, validating the radiance invariant.
    pub fn from_vec(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        check_dims(width, height)?;
        if data.len() != width * height * 3 {
            return Err(Error::Shape(format!(
                "{} samples for a {width}x{height} RGB image",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite() || *v < 0.0) {
            let index = i / 3;
            return Err(Error::InvalidPixel {
                index,
                x: index % width,
                y: index / width,
                channel: i % 3,
                value: data[i],
            });
        }
        Ok(RadianceImage {
            width,
            height,
            data,
        })
    }

    /// Builds an image from per-pixel values produced in row-major order.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> Rgb) -> Result<Self> {
        check_dims(width, height)?;
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Self::from_vec(width, height, data)
    }

    /// Internal constructor for kernels whose output is non-negative by construction.
    pub(crate) fn from_vec_unchecked(width: usize, height: usize, data: Vec<f32>) -> Self {
        debug_assert_eq!(data.len(), width * height * 3);
        debug_assert!(data.iter().all(|v| v.is_finite() && *v >= 0.0));
        RadianceImage {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> Rgb {
        self.pixel_at(y * self.width + x)
    }

    #[inline]
    pub fn pixel_at(&self, index: usize) -> Rgb {
        let o = index * 3;
        [self.data[o], self.data[o + 1], self.data[o + 2]]
    }

    /// Interleaved RGB samples, row-major from the top-left.
    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    pub fn same_dims(&self, other: &RadianceImage) -> bool {
        self.dims() == other.dims()
    }

    /// Multiplies every sample by `a` (which must be finite and non-negative).
    pub fn scaled(&self, a: f32) -> Result<RadianceImage> {
        if !a.is_finite() || a < 0.0 {
            return Err(Error::Parameter(format!("scale factor {a} must be finite and >= 0")));
        }
        let data = self.data.iter().map(|v| v * a).collect();
        RadianceImage::from_vec(self.width, self.height, data)
    }

    pub fn luminance_at(&self, index: usize) -> f64 {
        luminance(self.pixel_at(index))
    }
}

pub(crate) fn ensure_same_dims(a: &RadianceImage, b: &RadianceImage, what: &str) -> Result<()> {
    if a.same_dims(b) {
        Ok(())
    } else {
        Err(Error::Shape(format!(
            "{what}: {}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )))
    }
}

/// Result of [`axpy`]: the image plus how many samples had to be clamped at 0.
#[derive(Clone, Debug, PartialEq)]
pub struct AxpyOutput {
    pub image: RadianceImage,
    pub clamped: usize,
}

/// `a·x + y` per sample, evaluated in double precision and rounded once.
///
/// Negative results can only appear when `a < 0`; they are clamped to 0 and
/// counted in [`AxpyOutput::clamped`].
pub fn axpy(a: f32, x: &RadianceImage, y: &RadianceImage) -> Result<AxpyOutput> {
    if !a.is_finite() {
        return Err(Error::Parameter(format!("axpy scale {a} is not finite")));
    }
    ensure_same_dims(x, y, "axpy operands")?;
    let a64 = a as f64;
    let mut clamped = 0;
    let data = x
        .data
        .iter()
        .zip(&y.data)
        .map(|(&xv, &yv)| {
            let v = (a64 * xv as f64 + yv as f64) as f32;
            if v < 0.0 {
                clamped += 1;
                0.0
            } else {
                v
            }
        })
        .collect();
    Ok(AxpyOutput {
        image: RadianceImage::from_vec_unchecked(x.width, x.height, data),
        clamped,
    })
}

/// Per-pixel 3-vector map (surface normals). Zero vectors mark pixels without a normal.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalMap {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl NormalMap {
    pub fn zeros(width: usize, height: usize) -> Result<Self> {
        check_dims(width, height)?;
        Ok(NormalMap {
            width,
            height,
            data: vec![0.0; width * height * 3],
        })
    }

    /// Signed samples are allowed; only non-finite values are rejected.
    pub fn from_vec(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        check_dims(width, height)?;
        if data.len() != width * height * 3 {
            return Err(Error::Shape(format!(
                "{} samples for a {width}x{height} normal map",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            let index = i / 3;
            return Err(Error::InvalidPixel {
                index,
                x: index % width,
                y: index / width,
                channel: i % 3,
                value: data[i],
            });
        }
        Ok(NormalMap {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> Vec3) -> Result<Self> {
        check_dims(width, height)?;
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                let n = f(x, y);
                data.extend_from_slice(&[n.x as f32, n.y as f32, n.z as f32]);
            }
        }
        Self::from_vec(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn get(&self, index: usize) -> Vec3 {
        let o = index * 3;
        Vec3::new(self.data[o] as f64, self.data[o + 1] as f64, self.data[o + 2] as f64)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }
}

/// Single-channel scalar map (confidence and similar).
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarMap {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl ScalarMap {
    pub fn from_vec(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        check_dims(width, height)?;
        if data.len() != width * height {
            return Err(Error::Shape(format!(
                "{} samples for a {width}x{height} scalar map",
                data.len()
            )));
        }
        Ok(ScalarMap {
            width,
            height,
            data,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn get(&self, index: usize) -> f32 {
        self.data[index]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    /// Replicates the scalar into three channels, for PFM storage.
    pub fn to_image(&self) -> Result<RadianceImage> {
        let data = self.data.iter().flat_map(|&v| [v, v, v]).collect();
        RadianceImage::from_vec(self.width, self.height, data)
    }
}

/// Per-pixel boolean mask (object vs background).
#[derive(Clone, Debug, PartialEq)]
pub struct PixelMask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl PixelMask {
    pub fn from_vec(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        check_dims(width, height)?;
        if data.len() != width * height {
            return Err(Error::Shape(format!(
                "{} entries for a {width}x{height} mask",
                data.len()
            )));
        }
        Ok(PixelMask {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::from_vec(width, height, data)
    }

    pub fn full(width: usize, height: usize) -> Result<Self> {
        Self::from_vec(width, height, vec![true; width * height])
    }

    /// Pixels whose luminance exceeds 0.5 are inside the mask.
    pub fn from_image(image: &RadianceImage) -> Self {
        let data = (0..image.pixel_count())
            .map(|i| image.luminance_at(i) > 0.5)
            .collect();
        PixelMask {
            width: image.width(),
            height: image.height(),
            data,
        }
    }

    pub fn to_image(&self) -> RadianceImage {
        let data = self
            .data
            .iter()
            .flat_map(|&m| if m { [1.0; 3] } else { [0.0; 3] })
            .collect();
        RadianceImage::from_vec_unchecked(self.width, self.height, data)
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn get(&self, index: usize) -> bool {
        self.data[index]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&m| m).count()
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.data
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn new_fills_every_pixel() {
        let black = RadianceImage::new(2, 2, [0.0; 3]).unwrap();
        assert!(black.as_slice().iter().all(|&v| v == 0.0));
        let white = RadianceImage::new(1, 1, [1.0; 3]).unwrap();
        assert_eq!(white.pixel(0, 0), [1.0; 3]);
        let img = RadianceImage::new(4, 3, [0.5, 0.25, 0.0]).unwrap();
        assert_eq!(img.pixel_count(), 12);
        assert!((0..12).all(|i| img.pixel_at(i) == [0.5, 0.25, 0.0]));
    }

    #[test]
    fn zero_dimension_is_rejected() {
        assert!(matches!(RadianceImage::new(0, 3, [0.0; 3]), Err(Error::Dimension { .. })));
        assert!(matches!(RadianceImage::new(3, 0, [0.0; 3]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn invalid_samples_are_located() {
        let mut data = vec![0.0f32; 2 * 2 * 3];
        data[7] = f32::NAN;
        match RadianceImage::from_vec(2, 2, data) {
            Err(Error::InvalidPixel { index, x, y, channel, .. }) => {
                assert_eq!((index, x, y, channel), (2, 0, 1, 1));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(RadianceImage::new(1, 1, [-1.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn row_major_from_top_left() {
        let img = RadianceImage::from_fn(3, 2, |x, y| [x as f32, y as f32, 0.0]).unwrap();
        assert_eq!(img.pixel_at(4), [1.0, 1.0, 0.0]);
        assert_eq!(&img.as_slice()[3..6], &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn axpy_examples() {
        let x = RadianceImage::from_fn(3, 2, |x, y| [x as f32 * 0.3, y as f32, 0.7]).unwrap();
        let y = RadianceImage::from_fn(3, 2, |x, y| [0.1, x as f32 + y as f32, 0.2]).unwrap();
        assert_eq!(axpy(0.0, &x, &y).unwrap().image, y);

        let black = RadianceImage::new(3, 2, [0.0; 3]).unwrap();
        assert_eq!(axpy(1.0, &black, &y).unwrap().image, y);

        let q = RadianceImage::new(3, 2, [0.25; 3]).unwrap();
        let h = RadianceImage::new(3, 2, [0.5; 3]).unwrap();
        let out = axpy(2.0, &q, &h).unwrap();
        assert_eq!(out.image, RadianceImage::new(3, 2, [1.0; 3]).unwrap());
        assert_eq!(out.clamped, 0);
    }

    #[test]
    fn axpy_clamps_and_counts_negatives() {
        let x = RadianceImage::new(2, 1, [1.0; 3]).unwrap();
        let y = RadianceImage::new(2, 1, [0.25; 3]).unwrap();
        let out = axpy(-0.5, &x, &y).unwrap();
        assert!(out.image.as_slice().iter().all(|&v| v == 0.0));
        assert_eq!(out.clamped, 6);
    }

    #[test]
    fn axpy_shape_mismatch() {
        let x = RadianceImage::new(2, 1, [1.0; 3]).unwrap();
        let y = RadianceImage::new(1, 2, [1.0; 3]).unwrap();
        assert!(matches!(axpy(1.0, &x, &y), Err(Error::Shape(_))));
    }

    fn ulp(v: f32) -> f32 {
        let v = v.abs().max(f32::MIN_POSITIVE);
        f32::from_bits(v.to_bits() + 1) - v
    }

    proptest! {
        #[test]
        fn axpy_is_linear_within_rounding(
            a in 0.0f32..4.0,
            b in 0.0f32..4.0,
            xs in proptest::collection::vec(0.0f32..10.0, 12),
            ys in proptest::collection::vec(0.0f32..10.0, 12),
        ) {
            let x = RadianceImage::from_vec(2, 2, xs).unwrap();
            let y = RadianceImage::from_vec(2, 2, ys).unwrap();
            let lhs = axpy(a + b, &x, &y).unwrap().image;
            let inner = axpy(b, &x, &y).unwrap().image;
            let rhs = axpy(a, &x, &inner).unwrap().image;
            for ((l, r), xv) in lhs.as_slice().iter().zip(rhs.as_slice()).zip(x.as_slice()) {
                // rounding of a+b, the inner axpy and the outer axpy
                let bound = ulp(*l) + ulp(*r) + ulp(a + b) * xv;
                prop_assert!((l - r).abs() <= bound, "{l} vs {r}");
            }
        }

        #[test]
        fn axpy_is_pure(a in -2.0f32..2.0, xs in proptest::collection::vec(0.0f32..10.0, 6)) {
            let x = RadianceImage::from_vec(2, 1, xs).unwrap();
            let first = axpy(a, &x, &x).unwrap();
            let second = axpy(a, &x, &x).unwrap();
            prop_assert_eq!(first, second);
        }
    }
}

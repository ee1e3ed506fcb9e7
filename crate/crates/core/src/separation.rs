//! Diffuse/specular separation from cross- and parallel-polarized pairs.
//!
//! `diffuse = 2·cross`, `specular = 2·parallel − 2·cross`. Negative specular
//! samples (sensor noise, miscalibration) are clamped to 0 and the number of
//! affected pixels is reported.

use rayon::prelude::*;

use crate::error::Result;
use crate::field::ReflectanceField;
use crate::image::{ensure_same_dims, RadianceImage};

/// Separates one sample pair. Returns `(diffuse, specular, clamped)`.
#[inline]
pub(crate) fn separate_sample(cross: f32, parallel: f32) -> (f32, f32, bool) {
    let d = 2.0 * cross;
    let s = 2.0 * parallel - d;
    if s < 0.0 {
        (d, 0.0, true)
    } else {
        (d, s, false)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SeparatedPair {
    pub diffuse: RadianceImage,
    pub specular: RadianceImage,
    /// Pixels where at least one channel of the specular image was clamped.
    pub clamped_pixels: usize,
}

fn separate_slices(cross: &mut [f32], parallel: &mut [f32]) -> usize {
    let mut clamped = 0;
    for (c, p) in cross.chunks_exact_mut(3).zip(parallel.chunks_exact_mut(3)) {
        let mut any = false;
        for ch in 0..3 {
            let (d, s, cl) = separate_sample(c[ch], p[ch]);
            c[ch] = d;
            p[ch] = s;
            any |= cl;
        }
        clamped += any as usize;
    }
    clamped
}

pub fn separate_pair(cross: &RadianceImage, parallel: &RadianceImage) -> Result<SeparatedPair> {
    ensure_same_dims(cross, parallel, "cross/parallel pair")?;
    let (w, h) = cross.dims();
    let mut d = cross.as_slice().to_vec();
    let mut s = parallel.as_slice().to_vec();
    let clamped_pixels = separate_slices(&mut d, &mut s);
    Ok(SeparatedPair {
        diffuse: RadianceImage::from_vec_unchecked(w, h, d),
        specular: RadianceImage::from_vec_unchecked(w, h, s),
        clamped_pixels,
    })
}

/// Diffuse and specular OLAT stacks, in light order.
#[derive(Clone, Debug, PartialEq)]
pub struct SeparatedField {
    pub diffuse: Vec<RadianceImage>,
    pub specular: Vec<RadianceImage>,
    /// Clamped pixel count per light.
    pub clamped_pixels: Vec<usize>,
}

impl SeparatedField {
    pub fn total_clamped(&self) -> usize {
        self.clamped_pixels.iter().sum()
    }

    pub fn len(&self) -> usize {
        self.diffuse.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diffuse.is_empty()
    }
}

fn collect(pairs: Vec<SeparatedPair>) -> SeparatedField {
    let mut out = SeparatedField {
        diffuse: Vec::with_capacity(pairs.len()),
        specular: Vec::with_capacity(pairs.len()),
        clamped_pixels: Vec::with_capacity(pairs.len()),
    };
    for p in pairs {
        out.diffuse.push(p.diffuse);
        out.specular.push(p.specular);
        out.clamped_pixels.push(p.clamped_pixels);
    }
    out
}

/// Applies [`separate_pair`] to every light of the field.
pub fn separate_field(field: &ReflectanceField) -> Result<SeparatedField> {
    let pairs = field
        .cross()
        .par_iter()
        .zip(field.parallel())
        .map(|(c, p)| separate_pair(c, p))
        .collect::<Result<Vec<_>>>()?;
    Ok(collect(pairs))
}

/// Same as [`separate_field`] but reuses the field's buffers in place, which
/// halves peak memory on large stacks.
pub fn separate_field_owned(field: ReflectanceField) -> SeparatedField {
    let (_, cross, parallel, _) = field.into_parts();
    let pairs = cross
        .into_par_iter()
        .zip(parallel)
        .map(|(mut c, mut p)| {
            let (w, h) = c.dims();
            let clamped_pixels = separate_slices(c.as_mut_slice(), p.as_mut_slice());
            SeparatedPair {
                diffuse: RadianceImage::from_vec_unchecked(w, h, c.into_vec()),
                specular: RadianceImage::from_vec_unchecked(w, h, p.into_vec()),
                clamped_pixels,
            }
        })
        .collect();
    collect(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use proptest::prelude::*;

    fn constant(v: f32) -> RadianceImage {
        RadianceImage::new(3, 2, [v; 3]).unwrap()
    }

    #[test]
    fn substitution_example() {
        let out = separate_pair(&constant(0.3), &constant(0.5)).unwrap();
        for v in out.diffuse.as_slice() {
            assert!((v - 0.6).abs() < 1e-7);
        }
        for v in out.specular.as_slice() {
            assert!((v - 0.4).abs() < 1e-7);
        }
        assert_eq!(out.clamped_pixels, 0);
    }

    #[test]
    fn equal_pair_has_no_specular() {
        let img = RadianceImage::from_fn(4, 4, |x, y| [x as f32 * 0.1, y as f32 * 0.3, 0.7]).unwrap();
        let out = separate_pair(&img, &img).unwrap();
        assert!(out.specular.as_slice().iter().all(|&v| v == 0.0));
        assert_eq!(out.clamped_pixels, 0);
    }

    #[test]
    fn inverted_pair_is_clamped_everywhere() {
        let out = separate_pair(&constant(0.5), &constant(0.4)).unwrap();
        assert!(out.specular.as_slice().iter().all(|&v| v == 0.0));
        assert_eq!(out.clamped_pixels, 6);
    }

    #[test]
    fn dimension_mismatch() {
        let a = RadianceImage::new(2, 2, [0.0; 3]).unwrap();
        let b = RadianceImage::new(2, 3, [0.0; 3]).unwrap();
        assert!(matches!(separate_pair(&a, &b), Err(Error::Shape(_))));
    }

    fn pair_image(values: Vec<(f32, f32)>) -> (RadianceImage, RadianceImage) {
        let cross: Vec<f32> = values.iter().map(|v| v.0).collect();
        let parallel: Vec<f32> = values.iter().map(|v| v.1).collect();
        (
            RadianceImage::from_vec(2, 2, cross).unwrap(),
            RadianceImage::from_vec(2, 2, parallel).unwrap(),
        )
    }

    proptest! {
        #[test]
        fn energy_identity_where_unclamped(
            values in proptest::collection::vec((0.0f32..100.0, 0.0f32..100.0), 12)
        ) {
            let (cross, parallel) = pair_image(values);
            let out = separate_pair(&cross, &parallel).unwrap();
            for i in 0..12 {
                let (d, s, p) = (out.diffuse.as_slice()[i], out.specular.as_slice()[i], parallel.as_slice()[i]);
                // s = fl(2p − d) and the re-addition each round once, so
                // the sum may land one ulp away when d ≪ 2p
                if 2.0 * p >= d {
                    let ulps = ((d + s).to_bits() as i64 - (2.0 * p).to_bits() as i64).abs();
                    prop_assert!(ulps <= 1, "{} + {} vs {}", d, s, 2.0 * p);
                }
            }
        }

        #[test]
        fn scaling_commutes_with_separation(
            values in proptest::collection::vec((0.0f32..100.0, 0.0f32..100.0), 12),
            exp in -4i32..4,
        ) {
            // power-of-two scales are exact, so the identity holds bit for bit
            let a = 2f32.powi(exp);
            let (cross, parallel) = pair_image(values);
            let base = separate_pair(&cross, &parallel).unwrap();
            let scaled = separate_pair(&cross.scaled(a).unwrap(), &parallel.scaled(a).unwrap()).unwrap();
            prop_assert_eq!(scaled.diffuse, base.diffuse.scaled(a).unwrap());
            prop_assert_eq!(scaled.specular, base.specular.scaled(a).unwrap());
        }

        #[test]
        fn scaling_commutes_within_rounding(
            values in proptest::collection::vec((0.0f32..100.0, 0.0f32..100.0), 12),
            a in 0.0f32..10.0,
        ) {
            let (cross, parallel) = pair_image(values);
            let base = separate_pair(&cross, &parallel).unwrap();
            let scaled = separate_pair(&cross.scaled(a).unwrap(), &parallel.scaled(a).unwrap()).unwrap();
            for (s, b) in scaled.diffuse.as_slice().iter().zip(base.diffuse.as_slice()) {
                prop_assert!((s - a * b).abs() <= 1e-6 * (a * b).max(1.0));
            }
            for ((s, b), p) in scaled.specular.as_slice().iter().zip(base.specular.as_slice()).zip(parallel.as_slice()) {
                prop_assert!((s - a * b).abs() <= 1e-5 * (a * p).max(1.0));
            }
        }
    }
}

//! Environment-map relighting of OLAT stacks.
//!
//! An equirectangular environment is projected onto the rig: each light's RGB
//! weight is the solid-angle weighted mean radiance of the environment texels
//! within a cone around its direction. Relit images are weighted sums of the
//! OLAT images, accumulated per pixel in ascending light order with `f64`
//! accumulators so the result is independent of tiling and thread count.
//!
//! Equirectangular convention: column `u` maps to azimuth
//! `φ = 2π(u + 0.5)/W − π` about the view axis, row `v` maps to polar angle
//! `θ = π(v + 0.5)/H` measured from +Z, so the camera-facing pole is the top
//! row. Direction = `(sin θ cos φ, sin θ sin φ, cos θ)`.

use std::f64::consts::PI;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::ReflectanceField;
use crate::image::{NormalMap, RadianceImage};
use crate::light::LightRig;
use crate::separation::separate_sample;
use crate::tiling::{map_pixels, Tiling};
use crate::vec3::Vec3;

/// Default sampling cone half-angle, roughly the mean spacing of a 346-light dome.
pub const DEFAULT_CONE_DEG: f64 = 9.0;

#[derive(Clone, Debug, PartialEq)]
pub struct EnvironmentMap {
    image: RadianceImage,
}

impl EnvironmentMap {
    pub fn new(image: RadianceImage) -> Self {
        EnvironmentMap { image }
    }

    pub fn image(&self) -> &RadianceImage {
        &self.image
    }

    /// Direction through the centre of texel `(u, v)`.
    pub fn texel_direction(&self, u: usize, v: usize) -> Vec3 {
        let (w, h) = self.image.dims();
        let phi = 2.0 * PI * (u as f64 + 0.5) / w as f64 - PI;
        let theta = PI * (v as f64 + 0.5) / h as f64;
        Vec3::new(theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos())
    }

    /// Relative solid angle of texels in row `v` (∝ sin θ).
    pub fn row_weight(&self, v: usize) -> f64 {
        (PI * (v as f64 + 0.5) / self.image.height() as f64).sin()
    }

    /// Texel containing `direction`; inverse of [`Self::texel_direction`].
    pub fn texel_of(&self, direction: Vec3) -> (usize, usize) {
        let (w, h) = self.image.dims();
        let theta = direction.z.clamp(-1.0, 1.0).acos();
        let phi = direction.y.atan2(direction.x);
        let u = (((phi + PI) / (2.0 * PI)) * w as f64).floor() as usize;
        let v = ((theta / PI) * h as f64).floor() as usize;
        (u.min(w - 1), v.min(h - 1))
    }
}

/// One RGB weight per rig light.
#[derive(Clone, Debug, PartialEq)]
pub struct LightWeights {
    weights: Vec<[f32; 3]>,
    pub source: String,
}

impl LightWeights {
    pub fn new(weights: Vec<[f32; 3]>, source: impl Into<String>) -> Result<Self> {
        if let Some(k) = weights
            .iter()
            .position(|w| w.iter().any(|c| !c.is_finite() || *c < 0.0))
        {
            return Err(Error::Parameter(format!(
                "weight {k} = {:?} must be finite and >= 0",
                weights[k]
            )));
        }
        Ok(LightWeights {
            weights,
            source: source.into(),
        })
    }

    pub fn uniform(n: usize, value: f32) -> Result<Self> {
        Self::new(vec![[value; 3]; n], "uniform")
    }

    pub fn one_hot(n: usize, k: usize, value: [f32; 3]) -> Result<Self> {
        let mut w = vec![[0.0; 3]; n];
        w[k] = value;
        Self::new(w, format!("one-hot {k}"))
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    #[inline]
    pub fn get(&self, k: usize) -> [f32; 3] {
        self.weights[k]
    }

    pub fn as_slice(&self) -> &[[f32; 3]] {
        &self.weights
    }

    /// Componentwise sum of two weight sets.
    pub fn add(&self, other: &LightWeights) -> Result<LightWeights> {
        if self.len() != other.len() {
            return Err(Error::Shape("weight sets differ in length".into()));
        }
        let w = self
            .weights
            .iter()
            .zip(&other.weights)
            .map(|(a, b)| [a[0] + b[0], a[1] + b[1], a[2] + b[2]])
            .collect();
        Self::new(w, format!("{} + {}", self.source, other.source))
    }

    pub fn scaled(&self, s: f32) -> Result<LightWeights> {
        Self::new(
            self.weights.iter().map(|w| w.map(|c| c * s)).collect(),
            self.source.clone(),
        )
    }
}

/// Projects `env` onto the rig: solid-angle weighted mean over a cone of
/// half-angle `cone_deg` around each light. Lights whose cone contains no
/// texel centre take the nearest texel.
pub fn env_to_weights(env: &EnvironmentMap, rig: &LightRig, cone_deg: f64) -> Result<LightWeights> {
    if !(cone_deg > 0.0 && cone_deg <= 90.0) {
        return Err(Error::Parameter(format!("cone {cone_deg} deg must lie in (0, 90]")));
    }
    let (w, h) = env.image().dims();
    let texels: Vec<(Vec3, f64, [f64; 3])> = (0..h)
        .flat_map(|v| (0..w).map(move |u| (u, v)))
        .map(|(u, v)| {
            let px = env.image().pixel(u, v);
            (
                env.texel_direction(u, v),
                env.row_weight(v),
                px.map(|c| c as f64),
            )
        })
        .collect();
    let cos_cone = cone_deg.to_radians().cos();
    let weights: Vec<[f32; 3]> = rig
        .lights()
        .par_iter()
        .map(|light| {
            let mut acc = [0.0f64; 3];
            let mut total = 0.0f64;
            let mut nearest = 0;
            let mut nearest_dot = f64::NEG_INFINITY;
            for (i, (dir, sw, px)) in texels.iter().enumerate() {
                let d = dir.dot(light.direction);
                if d >= cos_cone {
                    total += sw;
                    for c in 0..3 {
                        acc[c] += sw * px[c];
                    }
                }
                if d > nearest_dot {
                    nearest_dot = d;
                    nearest = i;
                }
            }
            if total > 0.0 {
                acc.map(|a| (a / total) as f32)
            } else {
                texels[nearest].2.map(|c| c as f32)
            }
        })
        .collect();
    LightWeights::new(weights, "environment")
}

fn check_images(images: &[RadianceImage], weights: &LightWeights) -> Result<(usize, usize)> {
    if images.is_empty() || images.len() != weights.len() {
        return Err(Error::Shape(format!(
            "{} images for {} weights",
            images.len(),
            weights.len()
        )));
    }
    let dims = images[0].dims();
    if let Some(k) = images.iter().position(|i| i.dims() != dims) {
        return Err(Error::Shape(format!("image {k} size differs")));
    }
    Ok(dims)
}

/// `Σ_k weight_k ⊙ images_k`.
pub fn relight(images: &[RadianceImage], weights: &LightWeights) -> Result<RadianceImage> {
    relight_tiled(images, weights, Tiling::default())
}

pub fn relight_tiled(images: &[RadianceImage], weights: &LightWeights, tiling: Tiling) -> Result<RadianceImage> {
    let (w, h) = check_images(images, weights)?;
    let data = map_pixels::<3, _, _, _>(w, h, tiling, || (), |_, index| {
        let mut acc = [0.0f64; 3];
        for (img, wk) in images.iter().zip(weights.as_slice()) {
            let px = img.pixel_at(index);
            for c in 0..3 {
                acc[c] += wk[c] as f64 * px[c] as f64;
            }
        }
        acc.map(|v| v as f32)
    });
    RadianceImage::from_vec(w, h, data)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SeparatedRelight {
    pub diffuse: RadianceImage,
    pub specular: RadianceImage,
    /// Relit `Λ_d + Λ_s`.
    pub mixed: RadianceImage,
    /// Pixel samples clamped during separation, summed over lights.
    pub clamped_samples: usize,
}

/// Separates the field and relights the diffuse and specular stacks.
///
/// Separation and accumulation are fused per pixel, so the stacks are never
/// materialized; each term matches what [`crate::separation::separate_field`]
/// produces. The mixed term uses `Λ_d + Λ_s = max(2·parallel, 2·cross)`,
/// which is the same quantity evaluated without an intermediate rounding.
pub fn relight_separated(field: &ReflectanceField, weights: &LightWeights) -> Result<SeparatedRelight> {
    relight_separated_tiled(field, weights, Tiling::default())
}

pub fn relight_separated_tiled(
    field: &ReflectanceField,
    weights: &LightWeights,
    tiling: Tiling,
) -> Result<SeparatedRelight> {
    let (w, h) = check_images(field.cross(), weights)?;
    let cross = field.cross();
    let parallel = field.parallel();
    let data = map_pixels::<10, _, _, _>(w, h, tiling, || (), |_, index| {
        let mut acc = [0.0f64; 9];
        let mut clamped = 0u32;
        for k in 0..cross.len() {
            let c = cross[k].pixel_at(index);
            let p = parallel[k].pixel_at(index);
            let wk = weights.get(k);
            for ch in 0..3 {
                let (d, s, cl) = separate_sample(c[ch], p[ch]);
                let m = (2.0 * p[ch]).max(d);
                let wc = wk[ch] as f64;
                acc[ch] += wc * d as f64;
                acc[3 + ch] += wc * s as f64;
                acc[6 + ch] += wc * m as f64;
                clamped += cl as u32;
            }
        }
        let mut out = [0.0f32; 10];
        for (o, a) in out.iter_mut().zip(acc) {
            *o = a as f32;
        }
        out[9] = clamped as f32;
        out
    });
    let mut diffuse = Vec::with_capacity(w * h * 3);
    let mut specular = Vec::with_capacity(w * h * 3);
    let mut mixed = Vec::with_capacity(w * h * 3);
    let mut clamped_samples = 0usize;
    for px in data.chunks_exact(10) {
        diffuse.extend_from_slice(&px[0..3]);
        specular.extend_from_slice(&px[3..6]);
        mixed.extend_from_slice(&px[6..9]);
        clamped_samples += px[9] as usize;
    }
    Ok(SeparatedRelight {
        diffuse: RadianceImage::from_vec(w, h, diffuse)?,
        specular: RadianceImage::from_vec(w, h, specular)?,
        mixed: RadianceImage::from_vec(w, h, mixed)?,
        clamped_samples,
    })
}

/// `E_c = Σ_k weight_k,c · max(n·ω_k, 0)`; zero-normal pixels stay black.
pub fn irradiance_map(normal: &NormalMap, weights: &LightWeights, rig: &LightRig) -> Result<RadianceImage> {
    if weights.len() != rig.len() {
        return Err(Error::Shape(format!(
            "{} weights for a {}-light rig",
            weights.len(),
            rig.len()
        )));
    }
    let (w, h) = normal.dims();
    let dirs: Vec<Vec3> = rig.directions().collect();
    let data = map_pixels::<3, _, _, _>(w, h, Tiling::default(), || (), |_, index| {
        let n = normal.get(index);
        if n == Vec3::ZERO {
            return [0.0; 3];
        }
        let mut acc = [0.0f64; 3];
        for (d, wk) in dirs.iter().zip(weights.as_slice()) {
            let cos = n.dot(*d).max(0.0);
            for c in 0..3 {
                acc[c] += wk[c] as f64 * cos;
            }
        }
        acc.map(|v| v as f32)
    });
    RadianceImage::from_vec(w, h, data)
}

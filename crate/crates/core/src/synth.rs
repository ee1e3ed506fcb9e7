//! Synthetic polarized OLAT renderer used as ground truth.
//!
//! Each light contributes a clamped Lambertian term and a Blinn-style
//! specular lobe. The lobe is normalized per pixel by its discrete sum over
//! the rig (weighted by 4π/N), so the intensity-normalized specular images of
//! a pixel sum to exactly `ρ_s · N / 4π`. Polarization is packed with the
//! mean-of-cos² factor: cross = I_d/2, parallel = I_d/2 + I_s/2.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::ReflectanceField;
use crate::image::{NormalMap, PixelMask, RadianceImage, Rgb};
use crate::light::LightRig;
use crate::relight::LightWeights;
use crate::vec3::Vec3;

/// Known-material scene rendered by the oracle.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticScene {
    pub diffuse_albedo: RadianceImage,
    pub normal: NormalMap,
    pub specular_albedo: RadianceImage,
    /// Blinn lobe exponent α.
    pub specular_exponent: f64,
    pub view_direction: Vec3,
    pub mask: PixelMask,
}

impl SyntheticScene {
    pub fn new(
        diffuse_albedo: RadianceImage,
        normal: NormalMap,
        specular_albedo: RadianceImage,
        specular_exponent: f64,
        view_direction: Vec3,
        mask: PixelMask,
    ) -> Result<Self> {
        let dims = diffuse_albedo.dims();
        if normal.dims() != dims || specular_albedo.dims() != dims || mask.dims() != dims {
            return Err(Error::Shape(
                "scene maps must share the albedo dimensions".to_string(),
            ));
        }
        if !(specular_exponent > 0.0 && specular_exponent.is_finite()) {
            return Err(Error::Parameter(format!(
                "specular exponent {specular_exponent} must be positive"
            )));
        }
        if (view_direction.norm() - 1.0).abs() > 1e-9 {
            return Err(Error::Parameter("view direction must be a unit vector".into()));
        }
        for i in 0..dims.0 * dims.1 {
            if mask.get(i) && (normal.get(i).norm() - 1.0).abs() > 1e-5 {
                return Err(Error::Input(format!("normal at pixel {i} is not unit length")));
            }
        }
        Ok(SyntheticScene {
            diffuse_albedo,
            normal,
            specular_albedo,
            specular_exponent,
            view_direction,
            mask,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        self.diffuse_albedo.dims()
    }

    /// Unit normal at a masked pixel, in double precision.
    #[inline]
    fn unit_normal(&self, index: usize) -> Vec3 {
        let n = self.normal.get(index);
        n.try_normalize().unwrap_or(n)
    }

    /// Same scene with normals rotated about the view axis.
    pub fn rotated_z(&self, angle: f64) -> Result<Self> {
        let (w, h) = self.dims();
        let normal = NormalMap::from_fn(w, h, |x, y| {
            let i = y * w + x;
            if self.mask.get(i) {
                self.normal.get(i).rotate_z(angle)
            } else {
                Vec3::ZERO
            }
        })?;
        SyntheticScene::new(
            self.diffuse_albedo.clone(),
            normal,
            self.specular_albedo.clone(),
            self.specular_exponent,
            self.view_direction,
            self.mask.clone(),
        )
    }
}

/// Parameters of the built-in orthographic sphere scene.
#[derive(Clone, Debug, PartialEq)]
pub struct SphereParams {
    pub size: usize,
    /// Sphere radius as a fraction of half the image size.
    pub radius: f64,
    /// Diffuse albedo of the top, middle and bottom horizontal thirds.
    pub bands: [Rgb; 3],
    pub specular_albedo: Rgb,
    pub specular_exponent: f64,
}

impl Default for SphereParams {
    fn default() -> Self {
        SphereParams {
            size: 128,
            radius: 0.9,
            bands: [[0.8, 0.3, 0.2], [0.2, 0.7, 0.3], [0.3, 0.4, 0.9]],
            specular_albedo: [0.3; 3],
            specular_exponent: 50.0,
        }
    }
}

/// Orthographic sphere centred in a square image, viewed along -Z.
pub fn sphere_scene(p: &SphereParams) -> Result<SyntheticScene> {
    let size = p.size;
    if size == 0 || !(p.radius > 0.0 && p.radius <= 1.0) {
        return Err(Error::Parameter(format!(
            "sphere size {size} / radius {} out of range",
            p.radius
        )));
    }
    let half = size as f64 / 2.0;
    let r = p.radius * half;
    let coords = |x: usize, y: usize| {
        let u = (x as f64 + 0.5 - half) / r;
        let v = -(y as f64 + 0.5 - half) / r;
        (u, v, u * u + v * v)
    };
    let inside = |x, y| coords(x, y).2 < 1.0;
    let band = |y: usize| (3 * y / size).min(2);

    let mask = PixelMask::from_fn(size, size, inside)?;
    let normal = NormalMap::from_fn(size, size, |x, y| {
        let (u, v, d) = coords(x, y);
        if d < 1.0 {
            Vec3::new(u, v, (1.0 - d).sqrt())
        } else {
            Vec3::ZERO
        }
    })?;
    let diffuse = RadianceImage::from_fn(size, size, |x, y| {
        if inside(x, y) {
            p.bands[band(y)]
        } else {
            [0.0; 3]
        }
    })?;
    let specular = RadianceImage::from_fn(size, size, |x, y| {
        if inside(x, y) {
            p.specular_albedo
        } else {
            [0.0; 3]
        }
    })?;
    SyntheticScene::new(diffuse, normal, specular, p.specular_exponent, Vec3::Z, mask)
}

/// Rendered field plus the unpolarized component stacks it was packed from.
#[derive(Clone, Debug)]
pub struct OlatRender {
    pub field: ReflectanceField,
    pub diffuse: Vec<RadianceImage>,
    pub specular: Vec<RadianceImage>,
}

struct LobeTable {
    half_vectors: Vec<Option<Vec3>>,
    /// Per-pixel `(4π/N) Σ_k lobe_k` over the rig.
    norm: Vec<f64>,
    exponent: f64,
    integral: Option<i32>,
}

impl LobeTable {
    fn new(scene: &SyntheticScene, rig: &LightRig) -> Self {
        let half_vectors: Vec<Option<Vec3>> = rig
            .directions()
            .map(|w| (w + scene.view_direction).try_normalize())
            .collect();
        let exponent = scene.specular_exponent;
        let integral = (exponent.fract() == 0.0 && exponent <= i32::MAX as f64).then_some(exponent as i32);
        let mut table = LobeTable {
            half_vectors,
            norm: Vec::new(),
            exponent,
            integral,
        };
        let (w, h) = scene.dims();
        let solid_angle = 4.0 * PI / rig.len() as f64;
        table.norm = (0..w * h)
            .into_par_iter()
            .map(|i| {
                if !scene.mask.get(i) {
                    return 0.0;
                }
                let n = scene.unit_normal(i);
                let sum: f64 = (0..rig.len()).map(|k| table.raw(k, n)).sum();
                solid_angle * sum
            })
            .collect();
        table
    }

    #[inline]
    fn raw(&self, k: usize, n: Vec3) -> f64 {
        match self.half_vectors[k] {
            Some(h) => {
                let c = h.dot(n).max(0.0);
                match self.integral {
                    Some(e) => c.powi(e),
                    None => c.powf(self.exponent),
                }
            }
            None => 0.0,
        }
    }

    /// Normalized lobe value of light `k` at pixel `i`.
    #[inline]
    fn lobe(&self, k: usize, i: usize, n: Vec3) -> f64 {
        let norm = self.norm[i];
        if norm > 0.0 {
            self.raw(k, n) / norm
        } else {
            0.0
        }
    }
}

/// Unpolarized diffuse and specular images for light `k`.
fn render_light(scene: &SyntheticScene, rig: &LightRig, lobes: &LobeTable, k: usize) -> (Vec<f32>, Vec<f32>) {
    let (w, h) = scene.dims();
    let light = rig.light(k);
    let mut diffuse = vec![0.0f32; w * h * 3];
    let mut specular = vec![0.0f32; w * h * 3];
    for i in 0..w * h {
        if !scene.mask.get(i) {
            continue;
        }
        let n = scene.unit_normal(i);
        let cos = n.dot(light.direction).max(0.0);
        let lobe = lobes.lobe(k, i, n);
        let rho_d = scene.diffuse_albedo.pixel_at(i);
        let rho_s = scene.specular_albedo.pixel_at(i);
        for c in 0..3 {
            diffuse[i * 3 + c] = (rho_d[c] as f64 * light.intensity[c] * cos) as f32;
            specular[i * 3 + c] = (rho_s[c] as f64 * light.intensity[c] * lobe) as f32;
        }
    }
    (diffuse, specular)
}

fn pack_polarized(diffuse: &[f32], specular: &[f32]) -> (Vec<f32>, Vec<f32>) {
    let cross: Vec<f32> = diffuse.iter().map(|d| d * 0.5).collect();
    let parallel = diffuse
        .iter()
        .zip(specular)
        .map(|(d, s)| d * 0.5 + s * 0.5)
        .collect();
    (cross, parallel)
}

fn check_rig_scene(scene: &SyntheticScene, _rig: &LightRig) -> Result<()> {
    let (w, h) = scene.dims();
    if w == 0 || h == 0 {
        return Err(Error::Dimension { width: w, height: h });
    }
    Ok(())
}

/// Renders the cross/parallel OLAT field of `scene` under every rig light.
pub fn render_olat(scene: &SyntheticScene, rig: &Arc<LightRig>) -> Result<ReflectanceField> {
    check_rig_scene(scene, rig)?;
    let (w, h) = scene.dims();
    let lobes = LobeTable::new(scene, rig);
    let pairs: Vec<(RadianceImage, RadianceImage)> = (0..rig.len())
        .into_par_iter()
        .map(|k| {
            let (d, s) = render_light(scene, rig, &lobes, k);
            let (c, p) = pack_polarized(&d, &s);
            (
                RadianceImage::from_vec_unchecked(w, h, c),
                RadianceImage::from_vec_unchecked(w, h, p),
            )
        })
        .collect();
    let (cross, parallel) = pairs.into_iter().unzip();
    ReflectanceField::new(rig.clone(), cross, parallel, "synthetic")
}

/// Like [`render_olat`] but also returns the unpolarized diffuse and specular
/// stacks the field was packed from.
pub fn render_olat_with_components(scene: &SyntheticScene, rig: &Arc<LightRig>) -> Result<OlatRender> {
    check_rig_scene(scene, rig)?;
    let (w, h) = scene.dims();
    let lobes = LobeTable::new(scene, rig);
    let parts: Vec<[RadianceImage; 4]> = (0..rig.len())
        .into_par_iter()
        .map(|k| {
            let (d, s) = render_light(scene, rig, &lobes, k);
            let (c, p) = pack_polarized(&d, &s);
            [c, p, d, s].map(|v| RadianceImage::from_vec_unchecked(w, h, v))
        })
        .collect();
    let mut cross = Vec::with_capacity(parts.len());
    let mut parallel = Vec::with_capacity(parts.len());
    let mut diffuse = Vec::with_capacity(parts.len());
    let mut specular = Vec::with_capacity(parts.len());
    for [c, p, d, s] in parts {
        cross.push(c);
        parallel.push(p);
        diffuse.push(d);
        specular.push(s);
    }
    Ok(OlatRender {
        field: ReflectanceField::new(rig.clone(), cross, parallel, "synthetic")?,
        diffuse,
        specular,
    })
}

/// Unpolarized scene radiance under a weighted combination of rig lights.
#[derive(Clone, Debug)]
pub struct DirectRender {
    pub diffuse: RadianceImage,
    pub specular: RadianceImage,
    pub mixed: RadianceImage,
}

/// Renders the scene once under all lights scaled by `weights`, evaluating
/// the reflectance model per pixel directly rather than summing OLAT images.
pub fn render_under_weights(
    scene: &SyntheticScene,
    rig: &LightRig,
    weights: &LightWeights,
) -> Result<DirectRender> {
    if weights.len() != rig.len() {
        return Err(Error::Shape(format!(
            "{} weights for a {}-light rig",
            weights.len(),
            rig.len()
        )));
    }
    let (w, h) = scene.dims();
    let lobes = LobeTable::new(scene, rig);
    let per_pixel: Vec<[f64; 6]> = (0..w * h)
        .into_par_iter()
        .map(|i| {
            let mut acc = [0.0f64; 6];
            if !scene.mask.get(i) {
                return acc;
            }
            let n = scene.unit_normal(i);
            let rho_d = scene.diffuse_albedo.pixel_at(i);
            let rho_s = scene.specular_albedo.pixel_at(i);
            for (k, light) in rig.lights().iter().enumerate() {
                let cos = n.dot(light.direction).max(0.0);
                let lobe = lobes.lobe(k, i, n);
                let wk = weights.get(k);
                for c in 0..3 {
                    let e = wk[c] as f64 * light.intensity[c];
                    acc[c] += e * rho_d[c] as f64 * cos;
                    acc[3 + c] += e * rho_s[c] as f64 * lobe;
                }
            }
            acc
        })
        .collect();
    let image = |f: &dyn Fn(&[f64; 6], usize) -> f64| {
        let data = per_pixel
            .iter()
            .flat_map(|a| [f(a, 0) as f32, f(a, 1) as f32, f(a, 2) as f32])
            .collect();
        RadianceImage::from_vec(w, h, data)
    };
    Ok(DirectRender {
        diffuse: image(&|a, c| a[c])?,
        specular: image(&|a, c| a[3 + c])?,
        mixed: image(&|a, c| a[c] + a[3 + c])?,
    })
}

/// Multiplicative Gaussian noise: each sample becomes `v·(1 + σ·z)`, clamped at 0.
///
/// Every image draws from its own ChaCha stream keyed by `(seed, light,
/// polarization)`, consumed in row-major sample order, so the result does not
/// depend on thread scheduling.
pub fn add_noise(field: &ReflectanceField, sigma: f64, seed: u64) -> Result<ReflectanceField> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::Parameter(format!("noise sigma {sigma} must be >= 0")));
    }
    if sigma == 0.0 {
        return Ok(field.clone());
    }
    let noisy = |img: &RadianceImage, stream: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        let data = img
            .as_slice()
            .iter()
            .map(|&v| {
                let z: f64 = StandardNormal.sample(&mut rng);
                ((v as f64) * (1.0 + sigma * z)).max(0.0) as f32
            })
            .collect();
        RadianceImage::from_vec_unchecked(img.width(), img.height(), data)
    };
    let n = field.light_count();
    let images: Vec<RadianceImage> = (0..2 * n)
        .into_par_iter()
        .map(|j| {
            let k = j / 2;
            if j % 2 == 0 {
                noisy(&field.cross()[k], j as u64)
            } else {
                noisy(&field.parallel()[k], j as u64)
            }
        })
        .collect();
    let mut cross = Vec::with_capacity(n);
    let mut parallel = Vec::with_capacity(n);
    for (j, img) in images.into_iter().enumerate() {
        if j % 2 == 0 {
            cross.push(img);
        } else {
            parallel.push(img);
        }
    }
    ReflectanceField::new(field.rig_arc().clone(), cross, parallel, field.view_id())
}

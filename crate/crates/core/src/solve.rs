//! Per-pixel material recovery.
//!
//! Diffuse albedo and normal come from a Lambertian photometric-stereo fit on
//! the diffuse stack: luminance is used to pick unshadowed lights and to solve
//! for the scaled normal through the 3×3 normal equations, then each channel's
//! albedo is refit against the recovered normal. Specular albedo is the
//! discrete integral of the intensity-normalized specular stack,
//! `ρ_s = (4πκ/N) Σ_k Λ_s,k / L_k`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{MaterialMaps, ReflectanceField};
use crate::image::{NormalMap, PixelMask, RadianceImage, ScalarMap};
use crate::light::LightRig;
use crate::separation::separate_field;
use crate::tiling::{map_pixels, Tiling, DEFAULT_TILE};
use crate::vec3::Vec3;

/// Normal equations whose 1-norm condition number exceeds this are rejected.
pub const MAX_CONDITION: f64 = 1e8;

/// Objective for the normal fit.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambertObjective {
    /// `ρ·max(n·ω, 0)` over the unshadowed light set.
    #[default]
    Clamped,
    /// Two-sided `ρ·|n·ω|`, solved by re-estimating the sign of each light's
    /// cosine until the signs stop changing.
    Absolute,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveConfig {
    /// Lights dimmer than this fraction of the pixel's brightest light are
    /// treated as shadowed.
    pub shadow_threshold: f64,
    pub min_lights: usize,
    pub kappa: f64,
    /// Zero the specular albedo wherever the diffuse solve was rejected.
    pub use_confidence: bool,
    pub objective: LambertObjective,
    /// Execution setting only; results do not depend on it, so it is not
    /// written into artifacts.
    #[serde(skip_serializing)]
    pub tile: usize,
}

impl Default for SolveConfig {
    fn default() -> Self {
        SolveConfig {
            shadow_threshold: 0.1,
            min_lights: 3,
            kappa: 1.0,
            use_confidence: true,
            objective: LambertObjective::Clamped,
            tile: DEFAULT_TILE,
        }
    }
}

impl SolveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.shadow_threshold) {
            return Err(Error::Config(format!(
                "shadow_threshold {} must lie in [0, 1)",
                self.shadow_threshold
            )));
        }
        if self.min_lights < 3 {
            return Err(Error::Config(format!("min_lights {} must be >= 3", self.min_lights)));
        }
        if !(self.kappa > 0.0 && self.kappa.is_finite()) {
            return Err(Error::Config(format!("kappa {} must be positive", self.kappa)));
        }
        if self.tile == 0 {
            return Err(Error::Config("tile size must be >= 1".into()));
        }
        Ok(())
    }

    fn tiling(&self) -> Tiling {
        Tiling::new(self.tile)
    }
}

fn check_stack(images: &[RadianceImage], rig: &LightRig, what: &str) -> Result<(usize, usize)> {
    if images.len() != rig.len() {
        return Err(Error::Shape(format!(
            "{what} has {} images for a {}-light rig",
            images.len(),
            rig.len()
        )));
    }
    let dims = images[0].dims();
    if let Some(k) = images.iter().position(|i| i.dims() != dims) {
        return Err(Error::Shape(format!("{what}: light {k} image size differs")));
    }
    Ok(dims)
}

/// Symmetric 3×3 system accumulated from rows `a_k` and targets `t_k`.
#[derive(Default)]
struct NormalEquations {
    ata: [[f64; 3]; 3],
    atb: [f64; 3],
}

impl NormalEquations {
    #[inline]
    fn add(&mut self, a: Vec3, t: f64) {
        let a = a.to_array();
        for r in 0..3 {
            for c in 0..3 {
                self.ata[r][c] += a[r] * a[c];
            }
            self.atb[r] += a[r] * t;
        }
    }

    /// Solves via the adjugate; `None` when the system is singular or its
    /// 1-norm condition number exceeds [`MAX_CONDITION`].
    fn solve(&self) -> Option<Vec3> {
        let m = &self.ata;
        let cof = [
            [
                m[1][1] * m[2][2] - m[1][2] * m[2][1],
                m[0][2] * m[2][1] - m[0][1] * m[2][2],
                m[0][1] * m[1][2] - m[0][2] * m[1][1],
            ],
            [
                m[1][2] * m[2][0] - m[1][0] * m[2][2],
                m[0][0] * m[2][2] - m[0][2] * m[2][0],
                m[0][2] * m[1][0] - m[0][0] * m[1][2],
            ],
            [
                m[1][0] * m[2][1] - m[1][1] * m[2][0],
                m[0][1] * m[2][0] - m[0][0] * m[2][1],
                m[0][0] * m[1][1] - m[0][1] * m[1][0],
            ],
        ];
        let det = m[0][0] * cof[0][0] + m[0][1] * cof[1][0] + m[0][2] * cof[2][0];
        if det == 0.0 || !det.is_finite() {
            return None;
        }
        let inv = cof.map(|row| row.map(|v| v / det));
        let norm1 = |a: &[[f64; 3]; 3]| {
            (0..3)
                .map(|c| (0..3).map(|r| a[r][c].abs()).sum::<f64>())
                .fold(0.0, f64::max)
        };
        let cond = norm1(m) * norm1(&inv);
        if !(cond <= MAX_CONDITION) {
            return None;
        }
        let b = &self.atb;
        let x = Vec3::new(
            inv[0][0] * b[0] + inv[0][1] * b[1] + inv[0][2] * b[2],
            inv[1][0] * b[0] + inv[1][1] * b[1] + inv[1][2] * b[2],
            inv[2][0] * b[0] + inv[2][1] * b[1] + inv[2][2] * b[2],
        );
        x.is_finite().then_some(x)
    }
}

/// Output of [`solve_lambertian`].
#[derive(Clone, Debug, PartialEq)]
pub struct LambertianSolution {
    pub diffuse_albedo: RadianceImage,
    pub normal: NormalMap,
    pub confidence: ScalarMap,
    /// Pixels rejected because the normal equations were singular or
    /// ill-conditioned (as opposed to having too few lit lights).
    pub ill_conditioned: usize,
}

struct PixelFit {
    albedo: [f32; 3],
    normal: [f32; 3],
    confidence: f32,
    ill_conditioned: bool,
}

const REJECTED: PixelFit = PixelFit {
    albedo: [0.0; 3],
    normal: [0.0; 3],
    confidence: 0.0,
    ill_conditioned: false,
};

struct LightTable {
    dirs: Vec<Vec3>,
    intensity: Vec<[f64; 3]>,
    lum: Vec<f64>,
}

impl LightTable {
    fn new(rig: &LightRig) -> Self {
        LightTable {
            dirs: rig.directions().collect(),
            intensity: rig.lights().iter().map(|l| l.intensity).collect(),
            lum: rig.lights().iter().map(|l| l.luminance()).collect(),
        }
    }
}

fn fit_pixel(
    stack: &[RadianceImage],
    lights: &LightTable,
    cfg: &SolveConfig,
    index: usize,
    lum: &mut Vec<f64>,
    selected: &mut Vec<usize>,
) -> PixelFit {
    let n_lights = stack.len();
    lum.clear();
    lum.extend(stack.iter().map(|img| img.luminance_at(index)));
    let max = lum.iter().cloned().fold(0.0, f64::max);
    if !(max > 0.0) {
        return REJECTED;
    }
    let threshold = cfg.shadow_threshold * max;
    selected.clear();
    selected.extend((0..n_lights).filter(|&k| lum[k] > threshold));
    if selected.len() < cfg.min_lights {
        return REJECTED;
    }

    let mut eq = NormalEquations::default();
    for &k in selected.iter() {
        eq.add(lights.dirs[k] * lights.lum[k], lum[k]);
    }
    let Some(mut b) = eq.solve() else {
        return PixelFit {
            ill_conditioned: true,
            ..REJECTED
        };
    };

    if cfg.objective == LambertObjective::Absolute {
        let mut signs: Vec<bool> = selected.iter().map(|&k| b.dot(lights.dirs[k]) >= 0.0).collect();
        for _ in 0..16 {
            let mut eq = NormalEquations::default();
            for (&k, &positive) in selected.iter().zip(&signs) {
                let s = if positive { 1.0 } else { -1.0 };
                eq.add(lights.dirs[k] * (s * lights.lum[k]), lum[k]);
            }
            let Some(next) = eq.solve() else {
                return PixelFit {
                    ill_conditioned: true,
                    ..REJECTED
                };
            };
            b = next;
            let next_signs: Vec<bool> = selected.iter().map(|&k| b.dot(lights.dirs[k]) >= 0.0).collect();
            if next_signs == signs {
                break;
            }
            signs = next_signs;
        }
    }

    let Some(mut n) = b.try_normalize() else {
        return REJECTED;
    };
    if n.z < 0.0 {
        n = -n;
    }

    let mut num = [0.0f64; 3];
    let mut den = [0.0f64; 3];
    for &k in selected.iter() {
        let mut cos = n.dot(lights.dirs[k]);
        if cfg.objective == LambertObjective::Absolute {
            cos = cos.abs();
        }
        let px = stack[k].pixel_at(index);
        for c in 0..3 {
            num[c] += px[c] as f64 * cos;
            den[c] += lights.intensity[k][c] * cos * cos;
        }
    }
    let mut albedo = [0.0f32; 3];
    for c in 0..3 {
        if den[c] > 0.0 {
            albedo[c] = (num[c] / den[c]).max(0.0) as f32;
        }
    }
    // Fraction of the lights that can reach a front-facing point: a
    // quasi-uniform dome lights at most half of its sources on any surface.
    let confidence = (2.0 * selected.len() as f64 / n_lights as f64).min(1.0) as f32;
    PixelFit {
        albedo,
        normal: [n.x as f32, n.y as f32, n.z as f32],
        confidence,
        ill_conditioned: false,
    }
}

/// Recovers diffuse albedo, unit normal and confidence from the diffuse stack.
pub fn solve_lambertian(
    diffuse: &[RadianceImage],
    rig: &LightRig,
    cfg: &SolveConfig,
) -> Result<LambertianSolution> {
    cfg.validate()?;
    let (w, h) = check_stack(diffuse, rig, "diffuse stack")?;
    let lights = LightTable::new(rig);
    let n = rig.len();
    let packed = map_pixels::<8, _, _, _>(
        w,
        h,
        cfg.tiling(),
        || (Vec::with_capacity(n), Vec::with_capacity(n)),
        |(lum, sel), index| {
            let fit = fit_pixel(diffuse, &lights, cfg, index, lum, sel);
            [
                fit.albedo[0],
                fit.albedo[1],
                fit.albedo[2],
                fit.normal[0],
                fit.normal[1],
                fit.normal[2],
                fit.confidence,
                fit.ill_conditioned as u8 as f32,
            ]
        },
    );
    let mut albedo = Vec::with_capacity(w * h * 3);
    let mut normal = Vec::with_capacity(w * h * 3);
    let mut confidence = Vec::with_capacity(w * h);
    let mut ill_conditioned = 0;
    for px in packed.chunks_exact(8) {
        albedo.extend_from_slice(&px[0..3]);
        normal.extend_from_slice(&px[3..6]);
        confidence.push(px[6]);
        ill_conditioned += (px[7] > 0.0) as usize;
    }
    Ok(LambertianSolution {
        diffuse_albedo: RadianceImage::from_vec(w, h, albedo)?,
        normal: NormalMap::from_vec(w, h, normal)?,
        confidence: ScalarMap::from_vec(w, h, confidence)?,
        ill_conditioned,
    })
}

/// Per-pixel, per-channel `scale · Σ_k Λ_s,k / L_k`, accumulated in light order.
fn specular_sum(specular: &[RadianceImage], rig: &LightRig, tiling: Tiling, scale: f64) -> Result<RadianceImage> {
    let (w, h) = check_stack(specular, rig, "specular stack")?;
    let inv_intensity: Vec<[f64; 3]> = rig
        .lights()
        .iter()
        .map(|l| l.intensity.map(|v| 1.0 / v))
        .collect();
    let data = map_pixels::<3, _, _, _>(w, h, tiling, || (), |_, index| {
        let mut acc = [0.0f64; 3];
        for (img, inv) in specular.iter().zip(&inv_intensity) {
            let px = img.pixel_at(index);
            for c in 0..3 {
                acc[c] += px[c] as f64 * inv[c];
            }
        }
        acc.map(|v| (scale * v) as f32)
    });
    RadianceImage::from_vec(w, h, data)
}

/// Specular albedo `ρ_s = (4πκ/N) Σ_k Λ_s,k / L_k`.
pub fn solve_specular(specular: &[RadianceImage], rig: &LightRig, cfg: &SolveConfig) -> Result<RadianceImage> {
    cfg.validate()?;
    let scale = 4.0 * PI * cfg.kappa / rig.len() as f64;
    specular_sum(specular, rig, cfg.tiling(), scale)
}

/// Runs both solves and assembles the material maps.
pub fn solve_materials(
    diffuse: &[RadianceImage],
    specular: &[RadianceImage],
    rig: &LightRig,
    cfg: &SolveConfig,
) -> Result<(MaterialMaps, usize)> {
    let lambert = solve_lambertian(diffuse, rig, cfg)?;
    let mut rho_s = solve_specular(specular, rig, cfg)?;
    if rho_s.dims() != lambert.diffuse_albedo.dims() {
        return Err(Error::Shape("diffuse and specular stacks differ in size".into()));
    }
    if cfg.use_confidence {
        let conf = &lambert.confidence;
        for (i, px) in rho_s.as_mut_slice().chunks_exact_mut(3).enumerate() {
            if conf.get(i) == 0.0 {
                px.fill(0.0);
            }
        }
    }
    Ok((
        MaterialMaps {
            diffuse_albedo: lambert.diffuse_albedo,
            normal: lambert.normal,
            specular_albedo: rho_s,
            confidence: lambert.confidence,
        },
        lambert.ill_conditioned,
    ))
}

/// Solves for the κ that makes the mean recovered specular albedo over
/// `mask` (averaged over pixels and channels) equal `reference_rho_s`.
pub fn calibrate_kappa_from_specular(
    specular: &[RadianceImage],
    rig: &LightRig,
    mask: &PixelMask,
    reference_rho_s: f64,
) -> Result<f64> {
    if !(reference_rho_s > 0.0 && reference_rho_s.is_finite()) {
        return Err(Error::Calibration(format!(
            "reference specular albedo {reference_rho_s} must be positive"
        )));
    }
    let (w, h) = check_stack(specular, rig, "specular stack")?;
    if mask.dims() != (w, h) {
        return Err(Error::Shape("calibration mask size differs from the field".into()));
    }
    if mask.count() == 0 {
        return Err(Error::Calibration("calibration mask is empty".into()));
    }
    let integral = specular_sum(specular, rig, Tiling::default(), 4.0 * PI / rig.len() as f64)?;
    let mut sum = 0.0f64;
    for (i, px) in integral.as_slice().chunks_exact(3).enumerate() {
        if mask.get(i) {
            sum += px.iter().map(|&v| v as f64).sum::<f64>();
        }
    }
    let mean = sum / (3 * mask.count()) as f64;
    if !(mean > 0.0) {
        return Err(Error::Calibration(
            "calibration target has no specular response".into(),
        ));
    }
    Ok(reference_rho_s / mean)
}

/// Separates `field` and calibrates κ against a target of known specular albedo.
pub fn calibrate_kappa(field: &ReflectanceField, mask: &PixelMask, reference_rho_s: f64) -> Result<f64> {
    let separated = separate_field(field)?;
    calibrate_kappa_from_specular(&separated.specular, field.rig(), mask, reference_rho_s)
}

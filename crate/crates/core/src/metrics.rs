//! Image-quality metrics: MSE, PSNR and Gaussian-window SSIM.

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::field::MaterialMaps;
use crate::image::{ensure_same_dims, PixelMask, RadianceImage, LUMINANCE_WEIGHTS};
use crate::synth::SyntheticScene;

pub fn mse(a: &RadianceImage, b: &RadianceImage, mask: Option<&PixelMask>) -> Result<f64> {
    ensure_same_dims(a, b, "mse")?;
    if let Some(m) = mask {
        if m.dims() != a.dims() {
            return Err(Error::Shape(format!(
                "mask is {}x{}, images are {}x{}",
                m.dims().0,
                m.dims().1,
                a.width(),
                a.height()
            )));
        }
        if m.count() == 0 {
            return Err(Error::Parameter("mask selects no pixels".into()));
        }
    }
    let mut sum = 0.0f64;
    let mut n = 0usize;
    for i in 0..a.pixel_count() {
        if mask.is_some_and(|m| !m.get(i)) {
            continue;
        }
        let (pa, pb) = (a.pixel_at(i), b.pixel_at(i));
        for c in 0..3 {
            let d = pa[c] as f64 - pb[c] as f64;
            sum += d * d;
        }
        n += 3;
    }
    Ok(sum / n as f64)
}

/// PSNR in decibels, or `Identical` when the MSE is exactly zero.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Psnr {
    Identical,
    Db(f64),
}

impl Psnr {
    pub fn from_mse(mse: f64, peak: f64) -> Psnr {
        if mse == 0.0 {
            Psnr::Identical
        } else {
            Psnr::Db(10.0 * (peak * peak / mse).log10())
        }
    }

    /// Decibels, with `Identical` mapped to `+∞`.
    pub fn db(self) -> f64 {
        match self {
            Psnr::Identical => f64::INFINITY,
            Psnr::Db(v) => v,
        }
    }
}

impl Serialize for Psnr {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Psnr::Identical => s.serialize_str("identical"),
            Psnr::Db(v) => s.serialize_f64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for Psnr {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Tag(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Psnr::Db(v)),
            Raw::Tag(t) if t == "identical" => Ok(Psnr::Identical),
            Raw::Tag(t) => Err(serde::de::Error::custom(format!("unexpected psnr value {t:?}"))),
        }
    }
}

pub fn psnr(a: &RadianceImage, b: &RadianceImage, peak: f64, mask: Option<&PixelMask>) -> Result<Psnr> {
    if !(peak > 0.0 && peak.is_finite()) {
        return Err(Error::Parameter(format!("peak {peak} must be > 0")));
    }
    Ok(Psnr::from_mse(mse(a, b, mask)?, peak))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SsimParams {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub peak: f64,
    /// Tonemap exposure applied before comparison; `None` compares raw values.
    pub tonemap_exposure: Option<f64>,
}

impl Default for SsimParams {
    fn default() -> Self {
        SsimParams {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            peak: 1.0,
            tonemap_exposure: Some(1.0),
        }
    }
}

impl SsimParams {
    pub fn raw() -> Self {
        SsimParams {
            tonemap_exposure: None,
            ..Default::default()
        }
    }
}

/// `1 − exp(−exposure·x)`.
#[inline]
pub fn tonemap(x: f64, exposure: f64) -> f64 {
    1.0 - (-exposure * x).exp()
}

fn grey(img: &RadianceImage, exposure: Option<f64>) -> Vec<f64> {
    (0..img.pixel_count())
        .map(|i| {
            let px = img.pixel_at(i);
            (0..3)
                .map(|c| {
                    let v = px[c] as f64;
                    LUMINANCE_WEIGHTS[c] * exposure.map_or(v, |e| tonemap(v, e))
                })
                .sum()
        })
        .collect()
}

fn gaussian_kernel(window: usize, sigma: f64) -> Vec<f64> {
    let r = (window / 2) as f64;
    let raw: Vec<f64> = (0..window)
        .map(|i| {
            let x = i as f64 - r;
            (-x * x / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Mean local SSIM over every window position fully inside the image, on
/// luminance of the (optionally tonemapped) inputs.
pub fn ssim(a: &RadianceImage, b: &RadianceImage, p: &SsimParams) -> Result<f64> {
    ensure_same_dims(a, b, "ssim")?;
    if p.window == 0 || p.window.is_multiple_of(2) {
        return Err(Error::Parameter(format!("window {} must be odd", p.window)));
    }
    let (w, h) = a.dims();
    if w < p.window || h < p.window {
        return Err(Error::Shape(format!(
            "{w}x{h} image is smaller than the {} pixel window",
            p.window
        )));
    }
    let ga = grey(a, p.tonemap_exposure);
    let gb = grey(b, p.tonemap_exposure);
    let kernel = gaussian_kernel(p.window, p.sigma);
    let c1 = (p.k1 * p.peak).powi(2);
    let c2 = (p.k2 * p.peak).powi(2);
    let (ow, oh) = (w - p.window + 1, h - p.window + 1);

    // horizontal pass of the five moment images, valid columns only
    let horizontal: Vec<[f64; 5]> = (0..h)
        .into_par_iter()
        .flat_map_iter(|y| {
            let (ga, gb, kernel) = (&ga, &gb, &kernel);
            (0..ow).map(move |x| {
                let mut m = [0.0f64; 5];
                for (t, kw) in kernel.iter().enumerate() {
                    let i = y * w + x + t;
                    let (va, vb) = (ga[i], gb[i]);
                    m[0] += kw * va;
                    m[1] += kw * vb;
                    m[2] += kw * va * va;
                    m[3] += kw * vb * vb;
                    m[4] += kw * va * vb;
                }
                m
            })
        })
        .collect();

    let row_sums: Vec<f64> = (0..oh)
        .into_par_iter()
        .map(|y| {
            let mut sum = 0.0;
            for x in 0..ow {
                let mut m = [0.0f64; 5];
                for (t, kw) in kernel.iter().enumerate() {
                    let hm = horizontal[(y + t) * ow + x];
                    for j in 0..5 {
                        m[j] += kw * hm[j];
                    }
                }
                let (mu_a, mu_b) = (m[0], m[1]);
                let var_a = m[2] - mu_a * mu_a;
                let var_b = m[3] - mu_b * mu_b;
                let cov = m[4] - mu_a * mu_b;
                sum += ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2))
                    / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
            }
            sum
        })
        .collect();
    Ok(row_sums.iter().sum::<f64>() / (ow * oh) as f64)
}

/// Nearest-rank percentile, `q` in `[0, 1]`. `values` must be non-empty.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = (q * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// Errors of recovered materials against the synthetic ground truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaterialErrors {
    /// Foreground pixels the solver accepted (confidence > 0).
    pub solved_pixels: usize,
    pub median_normal_error_deg: f64,
    pub p95_normal_error_deg: f64,
    pub max_normal_error_deg: f64,
    /// Pixels with confidence above the threshold, used for the albedo errors.
    pub confident_pixels: usize,
    pub min_confidence: f32,
    /// Per-channel mean of |ρ̂_d − ρ_d| / ρ_d.
    pub diffuse_rel_error_mean: [f64; 3],
    pub diffuse_rel_error_max: [f64; 3],
    pub specular_albedo_mean: [f64; 3],
    /// Largest per-channel |ρ̂_s − ρ_s| over confident pixels.
    pub specular_abs_error_max: f64,
}

pub fn material_errors(truth: &SyntheticScene, maps: &MaterialMaps, min_confidence: f32) -> Result<MaterialErrors> {
    let (w, h) = truth.dims();
    if maps.diffuse_albedo.dims() != (w, h) {
        return Err(Error::Shape("recovered maps differ in size from the scene".into()));
    }
    let mut angles = Vec::new();
    let mut rel_sum = [0.0f64; 3];
    let mut rel_max = [0.0f64; 3];
    let mut spec_sum = [0.0f64; 3];
    let mut spec_max = 0.0f64;
    let mut confident = 0usize;
    for i in 0..w * h {
        let conf = maps.confidence.get(i);
        if !truth.mask.get(i) || conf <= 0.0 {
            continue;
        }
        angles.push(maps.normal.get(i).angle_to(truth.normal.get(i)).to_degrees());
        if conf <= min_confidence {
            continue;
        }
        confident += 1;
        let (got, want) = (maps.diffuse_albedo.pixel_at(i), truth.diffuse_albedo.pixel_at(i));
        let (gs, ws) = (maps.specular_albedo.pixel_at(i), truth.specular_albedo.pixel_at(i));
        for c in 0..3 {
            let rel = ((got[c] as f64 - want[c] as f64) / want[c] as f64).abs();
            rel_sum[c] += rel;
            rel_max[c] = rel_max[c].max(rel);
            spec_sum[c] += gs[c] as f64;
            spec_max = spec_max.max((gs[c] as f64 - ws[c] as f64).abs());
        }
    }
    if angles.is_empty() || confident == 0 {
        return Err(Error::Input("no solved foreground pixels to evaluate".into()));
    }
    Ok(MaterialErrors {
        solved_pixels: angles.len(),
        median_normal_error_deg: percentile(&angles, 0.5),
        p95_normal_error_deg: percentile(&angles, 0.95),
        max_normal_error_deg: percentile(&angles, 1.0),
        confident_pixels: confident,
        min_confidence,
        diffuse_rel_error_mean: rel_sum.map(|v| v / confident as f64),
        diffuse_rel_error_max: rel_max,
        specular_albedo_mean: spec_sum.map(|v| v / confident as f64),
        specular_abs_error_max: spec_max,
    })
}

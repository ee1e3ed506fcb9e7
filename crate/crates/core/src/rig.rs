//! Light-dome construction.
//!
//! Directions follow a golden-angle (Fibonacci) spiral: heights are evenly
//! spaced from the camera-side pole (+Z) down to the back pole, and each
//! successive light advances by the golden angle in azimuth. That yields a
//! quasi-uniform covering of the sphere whose index order is already the
//! front-to-back spiral acquisition order.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::light::{LightRig, LightSource, Polarizer};
use crate::vec3::Vec3;

/// Light count of the full dome.
pub const DOME_LIGHT_COUNT: usize = 346;

/// Builds an `n_lights` spiral rig with equal intensities and `Polarizer::Both`.
pub fn build_spiral_rig(n_lights: usize, intensity: [f64; 3]) -> Result<LightRig> {
    if n_lights < 4 {
        return Err(Error::Config(format!(
            "spiral rig needs at least 4 lights, got {n_lights}"
        )));
    }
    let golden_angle = PI * (3.0 - 5f64.sqrt());
    let n = n_lights as f64;
    let lights = (0..n_lights)
        .map(|k| {
            let z = 1.0 - (2.0 * k as f64 + 1.0) / n;
            let r = (1.0 - z * z).max(0.0).sqrt();
            let phi = golden_angle * k as f64;
            let direction = Vec3::new(r * phi.cos(), r * phi.sin(), z);
            LightSource {
                index: k,
                // renormalize so the unit-norm invariant holds to the last ulp
                direction: direction.try_normalize().unwrap_or(direction),
                intensity,
                polarizer: Polarizer::Both,
            }
        })
        .collect();
    LightRig::new(lights)
}

/// Index of the light whose direction is closest to `direction`; ties go to
/// the smaller index.
pub fn nearest_light(rig: &LightRig, direction: Vec3) -> usize {
    let mut best = 0;
    let mut best_dot = f64::NEG_INFINITY;
    for (k, d) in rig.directions().enumerate() {
        let dot = d.dot(direction);
        if dot > best_dot {
            best = k;
            best_dot = dot;
        }
    }
    best
}

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vec3::Vec3;

/// Polarizer state of a light's emission.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarizer {
    Cross,
    Parallel,
    /// One cross and one parallel measurement at the same direction.
    Both,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LightSource {
    pub index: usize,
    /// Unit vector from the scene origin toward the light.
    pub direction: Vec3,
    /// Per-channel radiant scale.
    pub intensity: [f64; 3],
    pub polarizer: Polarizer,
}

impl LightSource {
    pub fn luminance(&self) -> f64 {
        crate::image::luminance64(self.intensity)
    }
}

/// Minimum pairwise angular separation between rig directions, in radians.
pub const MIN_LIGHT_SEPARATION: f64 = 1e-6;

/// Ordered set of calibrated lights on the unit sphere around the object.
///
/// Indices run `0..N` in acquisition order. Immutable after construction.
#[derive(Clone, Debug, PartialEq)]
pub struct LightRig {
    lights: Vec<LightSource>,
}

impl LightRig {
    pub fn new(lights: Vec<LightSource>) -> Result<Self> {
        if lights.len() < 4 {
            return Err(Error::Config(format!(
                "a rig needs at least 4 lights, got {}",
                lights.len()
            )));
        }
        for (k, light) in lights.iter().enumerate() {
            if light.index != k {
                return Err(Error::Config(format!(
                    "light at position {k} carries index {}",
                    light.index
                )));
            }
            let norm = light.direction.norm();
            if !light.direction.is_finite() || (norm - 1.0).abs() > 1e-9 {
                return Err(Error::Config(format!(
                    "light {k} direction has norm {norm}, expected 1"
                )));
            }
            if light.intensity.iter().any(|c| !c.is_finite() || *c <= 0.0) {
                return Err(Error::Config(format!(
                    "light {k} intensity {:?} must be positive",
                    light.intensity
                )));
            }
        }
        for i in 0..lights.len() {
            for j in i + 1..lights.len() {
                let angle = lights[i].direction.angle_to(lights[j].direction);
                if angle <= MIN_LIGHT_SEPARATION {
                    return Err(Error::Config(format!(
                        "lights {i} and {j} share a direction (separation {angle:e} rad)"
                    )));
                }
            }
        }
        Ok(LightRig { lights })
    }

    /// Convenience constructor: lights with equal intensity, indexed in the given order.
    pub fn from_directions(directions: &[Vec3], intensity: [f64; 3]) -> Result<Self> {
        let lights = directions
            .iter()
            .enumerate()
            .map(|(index, d)| LightSource {
                index,
                direction: d.try_normalize().unwrap_or(*d),
                intensity,
                polarizer: Polarizer::Both,
            })
            .collect();
        LightRig::new(lights)
    }

    pub fn len(&self) -> usize {
        self.lights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lights.is_empty()
    }

    pub fn lights(&self) -> &[LightSource] {
        &self.lights
    }

    pub fn light(&self, k: usize) -> &LightSource {
        &self.lights[k]
    }

    pub fn directions(&self) -> impl Iterator<Item = Vec3> + '_ {
        self.lights.iter().map(|l| l.direction)
    }

    /// Same rig with every intensity multiplied by `c`.
    pub fn with_scaled_intensity(&self, c: f64) -> Result<Self> {
        let lights = self
            .lights
            .iter()
            .map(|l| LightSource {
                intensity: l.intensity.map(|v| v * c),
                ..l.clone()
            })
            .collect();
        LightRig::new(lights)
    }

    /// Same rig rotated about the view axis (+Z).
    pub fn rotated_z(&self, angle: f64) -> Result<Self> {
        let lights = self
            .lights
            .iter()
            .map(|l| LightSource {
                direction: l.direction.rotate_z(angle),
                ..l.clone()
            })
            .collect();
        LightRig::new(lights)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn axes() -> Vec<Vec3> {
        vec![Vec3::X, -Vec3::X, Vec3::Y, -Vec3::Y]
    }

    #[test]
    fn accepts_minimal_rig() {
        let rig = LightRig::from_directions(&axes(), [1.0; 3]).unwrap();
        assert_eq!(rig.len(), 4);
        assert_eq!(rig.light(2).direction, Vec3::Y);
    }

    #[test]
    fn rejects_small_rig() {
        assert!(matches!(
            LightRig::from_directions(&axes()[..3], [1.0; 3]),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn rejects_duplicate_direction() {
        let mut dirs = axes();
        dirs.push(Vec3::X);
        assert!(LightRig::from_directions(&dirs, [1.0; 3]).is_err());
    }

    #[test]
    fn rejects_non_positive_intensity() {
        assert!(LightRig::from_directions(&axes(), [1.0, 0.0, 1.0]).is_err());
    }

    #[test]
    fn rejects_non_unit_direction() {
        let mut lights: Vec<_> = LightRig::from_directions(&axes(), [1.0; 3])
            .unwrap()
            .lights()
            .to_vec();
        lights[0].direction = Vec3::new(1.0, 1e-4, 0.0);
        assert!(LightRig::new(lights).is_err());
    }

    #[test]
    fn rejects_out_of_order_index() {
        let mut lights: Vec<_> = LightRig::from_directions(&axes(), [1.0; 3])
            .unwrap()
            .lights()
            .to_vec();
        lights.swap(0, 1);
        assert!(LightRig::new(lights).is_err());
    }
}

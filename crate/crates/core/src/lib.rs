//! Polarized one-light-at-a-time (OLAT) reflectance-field processing.
//!
//! The pipeline separates cross/parallel polarized image pairs into diffuse
//! and specular stacks, solves per-pixel normals and albedos, relights fields
//! under environment maps and scores results. A synthetic renderer provides
//! ground truth for all of it.

// `!(x > 0.0)` rejects NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod field;
pub mod image;
pub mod io;
pub mod light;
pub mod metrics;
pub mod relight;
pub mod rig;
pub mod separation;
pub mod solve;
pub mod synth;
pub mod tiling;
pub mod vec3;

pub use error::{Error, Result};
pub use field::{MaterialMaps, ReflectanceField};
pub use image::{NormalMap, PixelMask, RadianceImage, Rgb, ScalarMap};
pub use light::{LightRig, LightSource, Polarizer};
pub use relight::{EnvironmentMap, LightWeights};
pub use tiling::Tiling;
pub use vec3::Vec3;

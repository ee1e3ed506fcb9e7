use std::sync::Arc;

use crate::error::{Error, Result};
use crate::image::{NormalMap, RadianceImage, ScalarMap};
use crate::light::LightRig;

/// Paired cross- and parallel-polarized OLAT sequences for one view.
#[derive(Clone, Debug, PartialEq)]
pub struct ReflectanceField {
    rig: Arc<LightRig>,
    cross: Vec<RadianceImage>,
    parallel: Vec<RadianceImage>,
    view_id: String,
}

impl ReflectanceField {
    pub fn new(
        rig: Arc<LightRig>,
        cross: Vec<RadianceImage>,
        parallel: Vec<RadianceImage>,
        view_id: impl Into<String>,
    ) -> Result<Self> {
        let n = rig.len();
        if cross.len() != n || parallel.len() != n {
            return Err(Error::Shape(format!(
                "field has {} cross and {} parallel images for a {n}-light rig",
                cross.len(),
                parallel.len()
            )));
        }
        let dims = cross[0].dims();
        for (k, (c, p)) in cross.iter().zip(&parallel).enumerate() {
            if c.dims() != dims || p.dims() != dims {
                return Err(Error::Shape(format!(
                    "light {k}: image size differs from {}x{}",
                    dims.0, dims.1
                )));
            }
        }
        Ok(ReflectanceField {
            rig,
            cross,
            parallel,
            view_id: view_id.into(),
        })
    }

    pub fn rig(&self) -> &LightRig {
        &self.rig
    }

    pub fn rig_arc(&self) -> &Arc<LightRig> {
        &self.rig
    }

    pub fn cross(&self) -> &[RadianceImage] {
        &self.cross
    }

    pub fn parallel(&self) -> &[RadianceImage] {
        &self.parallel
    }

    pub fn view_id(&self) -> &str {
        &self.view_id
    }

    pub fn light_count(&self) -> usize {
        self.cross.len()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.cross[0].dims()
    }

    pub fn into_parts(self) -> (Arc<LightRig>, Vec<RadianceImage>, Vec<RadianceImage>, String) {
        (self.rig, self.cross, self.parallel, self.view_id)
    }

    /// Every image multiplied by `a`.
    pub fn scaled(&self, a: f32) -> Result<Self> {
        let scale = |v: &[RadianceImage]| v.iter().map(|i| i.scaled(a)).collect::<Result<Vec<_>>>();
        ReflectanceField::new(
            self.rig.clone(),
            scale(&self.cross)?,
            scale(&self.parallel)?,
            self.view_id.clone(),
        )
    }
}

/// Per-pixel material estimate produced by the solver.
#[derive(Clone, Debug, PartialEq)]
pub struct MaterialMaps {
    pub diffuse_albedo: RadianceImage,
    /// Camera-space unit normals; zero where confidence is 0.
    pub normal: NormalMap,
    pub specular_albedo: RadianceImage,
    /// In `[0, 1]`; 0 marks pixels the solver rejected.
    pub confidence: ScalarMap,
}

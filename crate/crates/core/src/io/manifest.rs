//! JSON manifests: rigs, scenes, solve configs and on-disk reflectance fields.

use std::collections::BTreeSet;
use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::pfm::{read_normal_map, read_pfm, write_bytes, write_pfm};
use crate::error::{Error, Result};
use crate::field::ReflectanceField;
use crate::image::{PixelMask, RadianceImage};
use crate::light::{LightRig, LightSource, Polarizer};
use crate::rig::build_spiral_rig;
use crate::solve::SolveConfig;
use crate::synth::{sphere_scene, SphereParams, SyntheticScene};
use crate::vec3::Vec3;

pub const FORMAT_VERSION: u32 = 1;
pub const FIELD_MANIFEST_NAME: &str = "field.json";
pub const LOCK_NAME: &str = ".polarfield.lock";

pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Pretty-printed with a trailing newline.
pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_bytes(path.as_ref(), text.as_bytes())
}

fn check_version(version: u32, what: &str) -> Result<()> {
    if version != FORMAT_VERSION {
        return Err(Error::Manifest(format!(
            "{what} version {version} is not supported (expected {FORMAT_VERSION})"
        )));
    }
    Ok(())
}

fn resolve(base: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn parent(path: &Path) -> &Path {
    path.parent().unwrap_or_else(|| Path::new("."))
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_bytes(&bytes))
}

// ---------------------------------------------------------------- rig

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LightEntry {
    pub index: usize,
    pub direction: [f64; 3],
    pub intensity: [f64; 3],
    #[serde(default = "default_polarizer")]
    pub polarizer: Polarizer,
}

fn default_polarizer() -> Polarizer {
    Polarizer::Both
}

fn unit_intensity() -> [f64; 3] {
    [1.0; 3]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpiralSpec {
    pub count: usize,
    #[serde(default = "unit_intensity")]
    pub intensity: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RigSpec {
    Lights(Vec<LightEntry>),
    Spiral(SpiralSpec),
}

/// Either an explicit light list or a generated spiral.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RigFile {
    pub version: u32,
    #[serde(flatten)]
    pub spec: RigSpec,
}

impl RigFile {
    pub fn from_rig(rig: &LightRig) -> Self {
        RigFile {
            version: FORMAT_VERSION,
            spec: RigSpec::Lights(
                rig.lights()
                    .iter()
                    .map(|l| LightEntry {
                        index: l.index,
                        direction: l.direction.to_array(),
                        intensity: l.intensity,
                        polarizer: l.polarizer,
                    })
                    .collect(),
            ),
        }
    }

    pub fn build(&self) -> Result<LightRig> {
        check_version(self.version, "rig")?;
        match &self.spec {
            RigSpec::Spiral(s) => build_spiral_rig(s.count, s.intensity),
            RigSpec::Lights(entries) => LightRig::new(
                entries
                    .iter()
                    .map(|e| LightSource {
                        index: e.index,
                        direction: Vec3::from(e.direction),
                        intensity: e.intensity,
                        polarizer: e.polarizer,
                    })
                    .collect(),
            ),
        }
    }
}

pub fn read_rig(path: impl AsRef<Path>) -> Result<LightRig> {
    read_json::<RigFile>(path)?.build()
}

pub fn write_rig(rig: &LightRig, path: impl AsRef<Path>) -> Result<()> {
    write_json(path, &RigFile::from_rig(rig))
}

// ---------------------------------------------------------------- scene

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SphereSpec {
    pub size: usize,
    pub radius: f64,
    pub bands: [[f32; 3]; 3],
    pub specular_albedo: [f32; 3],
    pub specular_exponent: f64,
}

impl Default for SphereSpec {
    fn default() -> Self {
        let p = SphereParams::default();
        SphereSpec {
            size: p.size,
            radius: p.radius,
            bands: p.bands,
            specular_albedo: p.specular_albedo,
            specular_exponent: p.specular_exponent,
        }
    }
}

impl SphereSpec {
    pub fn params(&self) -> SphereParams {
        SphereParams {
            size: self.size,
            radius: self.radius,
            bands: self.bands,
            specular_albedo: self.specular_albedo,
            specular_exponent: self.specular_exponent,
        }
    }
}

fn view_z() -> [f64; 3] {
    [0.0, 0.0, 1.0]
}

/// Scene built from PFM maps; paths are relative to the scene file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapsSpec {
    pub diffuse_albedo: String,
    pub normal: String,
    pub specular_albedo: String,
    pub specular_exponent: f64,
    /// Optional PFM whose luminance > 0.5 marks foreground; defaults to non-zero normals.
    #[serde(default)]
    pub mask: Option<String>,
    #[serde(default = "view_z")]
    pub view_direction: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum SceneSpec {
    Sphere(SphereSpec),
    Maps(MapsSpec),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneFile {
    pub version: u32,
    #[serde(flatten)]
    pub spec: SceneSpec,
}

impl SceneFile {
    pub fn build(&self, base: &Path) -> Result<SyntheticScene> {
        check_version(self.version, "scene")?;
        match &self.spec {
            SceneSpec::Sphere(s) => sphere_scene(&s.params()),
            SceneSpec::Maps(m) => {
                let diffuse = read_pfm(resolve(base, &m.diffuse_albedo))?;
                let normal = read_normal_map(resolve(base, &m.normal))?;
                let specular = read_pfm(resolve(base, &m.specular_albedo))?;
                let (w, h) = normal.dims();
                let mask = match &m.mask {
                    Some(p) => PixelMask::from_image(&read_pfm(resolve(base, p))?),
                    None => PixelMask::from_fn(w, h, |x, y| normal.get(y * w + x) != Vec3::ZERO)?,
                };
                SyntheticScene::new(
                    diffuse,
                    normal,
                    specular,
                    m.specular_exponent,
                    Vec3::from(m.view_direction),
                    mask,
                )
            }
        }
    }
}

pub fn read_scene(path: impl AsRef<Path>) -> Result<SyntheticScene> {
    let path = path.as_ref();
    read_json::<SceneFile>(path)?.build(parent(path))
}

// ---------------------------------------------------------------- solve config

/// `{"version": 1, ...SolveConfig fields}`; unknown keys are rejected.
pub fn read_solve_config(path: impl AsRef<Path>) -> Result<SolveConfig> {
    let mut value: serde_json::Value = read_json(path)?;
    let obj = value
        .as_object_mut()
        .ok_or_else(|| Error::Config("solve config must be a JSON object".into()))?;
    let version = obj
        .remove("version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::Manifest("solve config lacks an integer version".into()))?;
    check_version(version as u32, "solve config")?;
    let config: SolveConfig = serde_json::from_value(value)?;
    config.validate()?;
    Ok(config)
}

pub fn write_solve_config(config: &SolveConfig, path: impl AsRef<Path>) -> Result<()> {
    let mut value = serde_json::to_value(config)?;
    if let Some(obj) = value.as_object_mut() {
        obj.insert("version".into(), FORMAT_VERSION.into());
    }
    write_json(path, &value)
}

// ---------------------------------------------------------------- field

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldEntry {
    pub index: usize,
    pub cross: String,
    pub parallel: String,
}

/// On-disk reflectance field: one cross and one parallel PFM per light.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldManifest {
    pub version: u32,
    pub rig: String,
    pub view_id: String,
    pub light_count: usize,
    pub width: usize,
    pub height: usize,
    pub lights: Vec<FieldEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<String>,
}

impl FieldManifest {
    /// Entry indices must cover `0..light_count` exactly once; returns them sorted.
    pub fn validate(&self) -> Result<Vec<&FieldEntry>> {
        check_version(self.version, "field manifest")?;
        if self.lights.len() != self.light_count {
            return Err(Error::Manifest(format!(
                "{} light entries for light_count {}",
                self.lights.len(),
                self.light_count
            )));
        }
        let mut seen = BTreeSet::new();
        for e in &self.lights {
            if e.index >= self.light_count {
                return Err(Error::Manifest(format!(
                    "light index {} out of range 0..{}",
                    e.index, self.light_count
                )));
            }
            if !seen.insert(e.index) {
                return Err(Error::Manifest(format!("duplicate light index {}", e.index)));
            }
        }
        let mut sorted: Vec<&FieldEntry> = self.lights.iter().collect();
        sorted.sort_by_key(|e| e.index);
        Ok(sorted)
    }
}

fn image_name(kind: &str, k: usize) -> String {
    format!("{kind}_{k:04}.pfm")
}

/// Writes PFMs, `rig.json` and `field.json` into `dir`; returns the manifest path.
pub fn save_field(field: &ReflectanceField, dir: impl AsRef<Path>, provenance: Option<String>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_rig(field.rig(), dir.join("rig.json"))?;
    let mut lights = Vec::with_capacity(field.light_count());
    for k in 0..field.light_count() {
        let entry = FieldEntry {
            index: k,
            cross: image_name("cross", k),
            parallel: image_name("parallel", k),
        };
        write_pfm(&field.cross()[k], dir.join(&entry.cross))?;
        write_pfm(&field.parallel()[k], dir.join(&entry.parallel))?;
        lights.push(entry);
    }
    let (width, height) = field.dims();
    let manifest = FieldManifest {
        version: FORMAT_VERSION,
        rig: "rig.json".into(),
        view_id: field.view_id().to_string(),
        light_count: field.light_count(),
        width,
        height,
        lights,
        provenance,
    };
    let path = dir.join(FIELD_MANIFEST_NAME);
    write_json(&path, &manifest)?;
    Ok(path)
}

/// Accepts either the manifest file or the directory containing `field.json`.
pub fn manifest_path(path: impl AsRef<Path>) -> PathBuf {
    let path = path.as_ref();
    if path.is_dir() {
        path.join(FIELD_MANIFEST_NAME)
    } else {
        path.to_path_buf()
    }
}

pub fn load_field(path: impl AsRef<Path>) -> Result<ReflectanceField> {
    let path = manifest_path(path);
    let base = parent(&path);
    let manifest: FieldManifest = read_json(&path)?;
    let entries = manifest.validate()?;
    let rig = read_rig(resolve(base, &manifest.rig))?;
    if rig.len() != manifest.light_count {
        return Err(Error::Manifest(format!(
            "rig has {} lights, manifest lists {}",
            rig.len(),
            manifest.light_count
        )));
    }
    let expected = (manifest.width, manifest.height);
    let load = |k: usize, name: &str| -> Result<RadianceImage> {
        let img = read_pfm(resolve(base, name))?;
        if img.dims() != expected {
            return Err(Error::Shape(format!(
                "light {k}: {name} is {}x{}, manifest says {}x{}",
                img.width(),
                img.height(),
                expected.0,
                expected.1
            )));
        }
        Ok(img)
    };
    let mut cross = Vec::with_capacity(entries.len());
    let mut parallel = Vec::with_capacity(entries.len());
    for e in entries {
        cross.push(load(e.index, &e.cross)?);
        parallel.push(load(e.index, &e.parallel)?);
    }
    ReflectanceField::new(Arc::new(rig), cross, parallel, manifest.view_id)
}

// ---------------------------------------------------------------- lock

/// Exclusive ownership of an output directory for the lifetime of the value.
#[derive(Debug)]
pub struct DirLock {
    path: PathBuf,
}

impl DirLock {
    pub fn acquire(dir: impl AsRef<Path>) -> Result<DirLock> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(LOCK_NAME);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(DirLock { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Input(format!(
                "{} is locked by another run (remove {} if stale)",
                dir.display(),
                path.display()
            ))),
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{add_noise, render_olat};

    fn small_field() -> ReflectanceField {
        let scene = sphere_scene(&SphereParams {
            size: 8,
            ..Default::default()
        })
        .unwrap();
        let field = render_olat(&scene, &Arc::new(build_spiral_rig(6, [1.0; 3]).unwrap())).unwrap();
        add_noise(&field, 0.01, 3).unwrap()
    }

    #[test]
    fn field_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let field = small_field();
        let manifest = save_field(&field, dir.path(), Some("seed 3".into())).unwrap();
        assert_eq!(load_field(&manifest).unwrap(), field);
        assert_eq!(load_field(dir.path()).unwrap(), field);
    }

    fn edit_manifest(dir: &Path, f: impl FnOnce(&mut FieldManifest)) {
        let p = dir.join(FIELD_MANIFEST_NAME);
        let mut m: FieldManifest = read_json(&p).unwrap();
        f(&mut m);
        write_json(&p, &m).unwrap();
    }

    #[test]
    fn missing_entry_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        save_field(&small_field(), dir.path(), None).unwrap();
        edit_manifest(dir.path(), |m| {
            m.lights.pop();
        });
        assert!(matches!(load_field(dir.path()), Err(Error::Manifest(_))));
    }

    #[test]
    fn duplicate_index_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        save_field(&small_field(), dir.path(), None).unwrap();
        edit_manifest(dir.path(), |m| m.lights[2].index = 1);
        let err = load_field(dir.path()).unwrap_err().to_string();
        assert!(err.contains("duplicate light index 1"), "{err}");
    }

    #[test]
    fn wrong_size_names_light() {
        let dir = tempfile::tempdir().unwrap();
        save_field(&small_field(), dir.path(), None).unwrap();
        write_pfm(&RadianceImage::new(4, 4, [0.0; 3]).unwrap(), dir.path().join(image_name("parallel", 4))).unwrap();
        let err = load_field(dir.path()).unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
        assert!(err.to_string().contains("light 4"), "{err}");
    }

    #[test]
    fn missing_image_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        save_field(&small_field(), dir.path(), None).unwrap();
        fs::remove_file(dir.path().join(image_name("cross", 0))).unwrap();
        assert!(matches!(load_field(dir.path()), Err(Error::Io { .. })));
    }

    #[test]
    fn rig_files() {
        let dir = tempfile::tempdir().unwrap();
        let rig = build_spiral_rig(10, [1.0, 2.0, 0.5]).unwrap();
        let p = dir.path().join("rig.json");
        write_rig(&rig, &p).unwrap();
        assert_eq!(read_rig(&p).unwrap(), rig);

        fs::write(&p, r#"{"version":1,"spiral":{"count":10,"intensity":[1,2,0.5]}}"#).unwrap();
        assert_eq!(read_rig(&p).unwrap(), rig);
        fs::write(&p, r#"{"version":2,"spiral":{"count":10}}"#).unwrap();
        assert!(matches!(read_rig(&p), Err(Error::Manifest(_))));
        fs::write(&p, r#"{"version":1}"#).unwrap();
        assert!(read_rig(&p).is_err());
    }

    #[test]
    fn scene_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("scene.json");
        fs::write(&p, r#"{"version":1,"type":"sphere","size":16}"#).unwrap();
        let scene = read_scene(&p).unwrap();
        let expected = sphere_scene(&SphereParams {
            size: 16,
            ..Default::default()
        })
        .unwrap();
        assert_eq!(scene, expected);

        write_pfm(&expected.diffuse_albedo, dir.path().join("d.pfm")).unwrap();
        super::super::pfm::write_normal_map(&expected.normal, dir.path().join("n.pfm")).unwrap();
        write_pfm(&expected.specular_albedo, dir.path().join("s.pfm")).unwrap();
        fs::write(
            &p,
            r#"{"version":1,"type":"maps","diffuse_albedo":"d.pfm","normal":"n.pfm",
                "specular_albedo":"s.pfm","specular_exponent":50}"#,
        )
        .unwrap();
        let from_maps = read_scene(&p).unwrap();
        assert_eq!(from_maps.normal, expected.normal);
        assert_eq!(from_maps.mask, expected.mask);
    }

    #[test]
    fn solve_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("solve.json");
        let cfg = SolveConfig {
            kappa: 2.5,
            ..Default::default()
        };
        write_solve_config(&cfg, &p).unwrap();
        assert_eq!(read_solve_config(&p).unwrap(), cfg);
        fs::write(&p, r#"{"version":1,"shadow_threshold":2.0}"#).unwrap();
        assert!(read_solve_config(&p).is_err());
    }

    #[test]
    fn lock_is_exclusive() {
        let dir = tempfile::tempdir().unwrap();
        let lock = DirLock::acquire(dir.path()).unwrap();
        assert!(matches!(DirLock::acquire(dir.path()), Err(Error::Input(_))));
        drop(lock);
        assert!(DirLock::acquire(dir.path()).is_ok());
    }

    #[test]
    fn hashes() {
        assert_eq!(
            sha256_bytes(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f");
        fs::write(&p, b"abc").unwrap();
        assert_eq!(sha256_file(&p).unwrap(), sha256_bytes(b"abc"));
    }
}

//! Standalone pipeline stages. Each reads its inputs from disk, writes its
//! artifacts and returns a summary; `run` chains the same building blocks.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use polarfield::io::{
    self, load_field, read_json, read_normal_map, read_pfm, read_rig, read_scene, read_solve_config, save_field,
    write_json, write_normal_map, write_pfm, write_rig, write_scalar_map, DirLock, FORMAT_VERSION,
};
use polarfield::metrics::{mse, psnr, ssim, Psnr, SsimParams};
use polarfield::relight::{env_to_weights, irradiance_map, relight_separated_tiled, SeparatedRelight};
use polarfield::separation::{separate_field_owned, SeparatedField};
use polarfield::solve::{calibrate_kappa_from_specular, solve_materials, SolveConfig};
use polarfield::synth::{add_noise, render_olat, SyntheticScene};
use polarfield::{EnvironmentMap, Error, LightRig, MaterialMaps, PixelMask, RadianceImage, ReflectanceField, Tiling};
use serde::{Deserialize, Serialize};

/// Pipeline stage, used to label failures and pick the exit code.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Config,
    Synth,
    Separate,
    Solve,
    Relight,
    Metrics,
}

impl Stage {
    pub fn exit_code(self) -> i32 {
        match self {
            Stage::Config => 2,
            Stage::Synth => 3,
            Stage::Separate => 4,
            Stage::Solve => 5,
            Stage::Relight => 6,
            Stage::Metrics => 7,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Stage::Config => "config",
            Stage::Synth => "synth",
            Stage::Separate => "separate",
            Stage::Solve => "solve",
            Stage::Relight => "relight",
            Stage::Metrics => "metrics",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug)]
pub struct StageError {
    pub stage: Stage,
    pub error: Error,
}

impl fmt::Display for StageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} stage failed: {}", self.stage, self.error)
    }
}

impl std::error::Error for StageError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

pub type StageResult<T> = Result<T, StageError>;

pub(crate) trait InStage<T> {
    fn stage(self, stage: Stage) -> StageResult<T>;
}

impl<T> InStage<T> for polarfield::Result<T> {
    fn stage(self, stage: Stage) -> StageResult<T> {
        self.map_err(|error| StageError { stage, error })
    }
}

/// Settings shared by every stage.
#[derive(Clone, Debug)]
pub struct Context {
    pub workdir: PathBuf,
    pub tile: Option<usize>,
    pub seed: u64,
}

impl Default for Context {
    fn default() -> Self {
        Context {
            workdir: PathBuf::from("."),
            tile: None,
            seed: 0,
        }
    }
}

impl Context {
    pub fn path(&self, p: impl AsRef<Path>) -> PathBuf {
        let p = p.as_ref();
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.workdir.join(p)
        }
    }

    pub fn tiling(&self) -> Tiling {
        self.tile.map(Tiling::new).unwrap_or_default()
    }
}

fn create_dir(dir: &Path) -> polarfield::Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn parent_dir(path: &Path) -> polarfield::Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => create_dir(p),
        _ => Ok(()),
    }
}

// ---------------------------------------------------------------- synth

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSummary {
    pub lights: usize,
    pub width: usize,
    pub height: usize,
    pub noise: f64,
    pub seed: u64,
}

/// Renders `scene` under `rig`, applying multiplicative noise when `noise > 0`.
pub fn render_field(scene: &SyntheticScene, rig: LightRig, noise: f64, seed: u64) -> polarfield::Result<ReflectanceField> {
    let field = render_olat(scene, &Arc::new(rig))?;
    if noise > 0.0 {
        add_noise(&field, noise, seed)
    } else if noise == 0.0 {
        Ok(field)
    } else {
        Err(Error::Parameter(format!("noise {noise} must be >= 0")))
    }
}

/// Ground-truth maps next to a synthetic field.
pub fn write_truth(scene: &SyntheticScene, dir: &Path) -> polarfield::Result<()> {
    create_dir(dir)?;
    write_pfm(&scene.diffuse_albedo, dir.join("diffuse_albedo.pfm"))?;
    write_normal_map(&scene.normal, dir.join("normal.pfm"))?;
    write_pfm(&scene.specular_albedo, dir.join("specular_albedo.pfm"))?;
    write_pfm(&scene.mask.to_image(), dir.join("mask.pfm"))
}

pub fn synth(
    ctx: &Context,
    scene_path: &Path,
    rig_path: &Path,
    out: &Path,
    noise: f64,
    truth: Option<&Path>,
) -> StageResult<SynthSummary> {
    let scene = read_scene(ctx.path(scene_path)).stage(Stage::Synth)?;
    let rig = read_rig(ctx.path(rig_path)).stage(Stage::Synth)?;
    let out = ctx.path(out);
    let _lock = DirLock::acquire(&out).stage(Stage::Synth)?;
    let field = render_field(&scene, rig, noise, ctx.seed).stage(Stage::Synth)?;
    save_field(&field, &out, Some(provenance(ctx.seed, noise))).stage(Stage::Synth)?;
    if let Some(t) = truth {
        write_truth(&scene, &ctx.path(t)).stage(Stage::Synth)?;
    }
    let (width, height) = field.dims();
    Ok(SynthSummary {
        lights: field.light_count(),
        width,
        height,
        noise,
        seed: ctx.seed,
    })
}

pub(crate) fn provenance(seed: u64, noise: f64) -> String {
    format!("synthetic; seed {seed}; noise {noise}")
}

// ---------------------------------------------------------------- separate

pub const SEPARATED_MANIFEST_NAME: &str = "separated.json";

/// On-disk diffuse and specular stacks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeparatedManifest {
    pub version: u32,
    pub rig: String,
    pub view_id: String,
    pub light_count: usize,
    pub width: usize,
    pub height: usize,
    pub diffuse: Vec<String>,
    pub specular: Vec<String>,
    pub clamped_pixels: Vec<usize>,
    pub total_clamped: usize,
}

pub fn write_separated(sep: &SeparatedField, rig: &LightRig, view_id: &str, dir: &Path) -> polarfield::Result<PathBuf> {
    create_dir(dir)?;
    write_rig(rig, dir.join("rig.json"))?;
    let mut diffuse = Vec::with_capacity(sep.len());
    let mut specular = Vec::with_capacity(sep.len());
    for k in 0..sep.len() {
        let (d, s) = (format!("diffuse_{k:04}.pfm"), format!("specular_{k:04}.pfm"));
        write_pfm(&sep.diffuse[k], dir.join(&d))?;
        write_pfm(&sep.specular[k], dir.join(&s))?;
        diffuse.push(d);
        specular.push(s);
    }
    let (width, height) = sep.diffuse[0].dims();
    let manifest = SeparatedManifest {
        version: FORMAT_VERSION,
        rig: "rig.json".into(),
        view_id: view_id.to_string(),
        light_count: sep.len(),
        width,
        height,
        diffuse,
        specular,
        clamped_pixels: sep.clamped_pixels.clone(),
        total_clamped: sep.total_clamped(),
    };
    let path = dir.join(SEPARATED_MANIFEST_NAME);
    write_json(&path, &manifest)?;
    Ok(path)
}

pub struct SeparatedStacks {
    pub rig: LightRig,
    pub diffuse: Vec<RadianceImage>,
    pub specular: Vec<RadianceImage>,
}

pub fn load_separated(dir: &Path) -> polarfield::Result<SeparatedStacks> {
    let m: SeparatedManifest = read_json(dir.join(SEPARATED_MANIFEST_NAME))?;
    if m.version != FORMAT_VERSION {
        return Err(Error::Manifest(format!("separated manifest version {} unsupported", m.version)));
    }
    if m.diffuse.len() != m.light_count || m.specular.len() != m.light_count {
        return Err(Error::Manifest(format!(
            "{} diffuse and {} specular entries for light_count {}",
            m.diffuse.len(),
            m.specular.len(),
            m.light_count
        )));
    }
    let rig = read_rig(dir.join(&m.rig))?;
    let load = |k: usize, name: &str| -> polarfield::Result<RadianceImage> {
        let img = read_pfm(dir.join(name))?;
        if img.dims() != (m.width, m.height) {
            return Err(Error::Shape(format!("light {k}: {name} has the wrong size")));
        }
        Ok(img)
    };
    let mut diffuse = Vec::with_capacity(m.light_count);
    let mut specular = Vec::with_capacity(m.light_count);
    for k in 0..m.light_count {
        diffuse.push(load(k, &m.diffuse[k])?);
        specular.push(load(k, &m.specular[k])?);
    }
    Ok(SeparatedStacks { rig, diffuse, specular })
}

/// Loads a separated directory, or separates a field directory on the fly.
pub fn load_stacks(dir: &Path) -> polarfield::Result<SeparatedStacks> {
    if dir.join(SEPARATED_MANIFEST_NAME).is_file() {
        return load_separated(dir);
    }
    let field = load_field(dir)?;
    let rig = field.rig().clone();
    let sep = separate_field_owned(field);
    Ok(SeparatedStacks {
        rig,
        diffuse: sep.diffuse,
        specular: sep.specular,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeparateSummary {
    pub lights: usize,
    pub total_clamped: usize,
}

pub fn separate(ctx: &Context, field_dir: &Path, out: &Path) -> StageResult<SeparateSummary> {
    let field = load_field(ctx.path(field_dir)).stage(Stage::Separate)?;
    let out = ctx.path(out);
    let _lock = DirLock::acquire(&out).stage(Stage::Separate)?;
    let rig = field.rig().clone();
    let view_id = field.view_id().to_string();
    let sep = separate_field_owned(field);
    write_separated(&sep, &rig, &view_id, &out).stage(Stage::Separate)?;
    Ok(SeparateSummary {
        lights: sep.len(),
        total_clamped: sep.total_clamped(),
    })
}

// ---------------------------------------------------------------- solve

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveSummary {
    pub version: u32,
    pub config: SolveConfig,
    pub solved_pixels: usize,
    pub ill_conditioned_pixels: usize,
}

pub fn solve_config(ctx: &Context, path: Option<&Path>, kappa: Option<f64>) -> polarfield::Result<SolveConfig> {
    let mut cfg = match path {
        Some(p) => read_solve_config(ctx.path(p))?,
        None => SolveConfig::default(),
    };
    if let Some(k) = kappa {
        cfg.kappa = k;
    }
    if let Some(t) = ctx.tile {
        cfg.tile = t;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn write_materials(maps: &MaterialMaps, summary: &SolveSummary, dir: &Path) -> polarfield::Result<()> {
    create_dir(dir)?;
    write_pfm(&maps.diffuse_albedo, dir.join("diffuse_albedo.pfm"))?;
    write_normal_map(&maps.normal, dir.join("normal.pfm"))?;
    write_pfm(&maps.specular_albedo, dir.join("specular_albedo.pfm"))?;
    write_scalar_map(&maps.confidence, dir.join("confidence.pfm"))?;
    write_json(dir.join("materials.json"), summary)
}

pub fn solve_stacks(stacks: &SeparatedStacks, cfg: &SolveConfig) -> polarfield::Result<(MaterialMaps, SolveSummary)> {
    let (maps, ill) = solve_materials(&stacks.diffuse, &stacks.specular, &stacks.rig, cfg)?;
    let solved = maps.confidence.as_slice().iter().filter(|&&c| c > 0.0).count();
    Ok((
        maps,
        SolveSummary {
            version: FORMAT_VERSION,
            config: cfg.clone(),
            solved_pixels: solved,
            ill_conditioned_pixels: ill,
        },
    ))
}

pub fn solve(
    ctx: &Context,
    input: &Path,
    config: Option<&Path>,
    kappa: Option<f64>,
    out: &Path,
) -> StageResult<SolveSummary> {
    let cfg = solve_config(ctx, config, kappa).stage(Stage::Config)?;
    let stacks = load_stacks(&ctx.path(input)).stage(Stage::Solve)?;
    let out = ctx.path(out);
    let _lock = DirLock::acquire(&out).stage(Stage::Solve)?;
    let (maps, summary) = solve_stacks(&stacks, &cfg).stage(Stage::Solve)?;
    write_materials(&maps, &summary, &out).stage(Stage::Solve)?;
    Ok(summary)
}

// ---------------------------------------------------------------- calibrate-kappa

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KappaReport {
    pub version: u32,
    pub kappa: f64,
    pub reference_specular_albedo: f64,
    pub mask_pixels: usize,
}

/// Axis-aligned patch `[x, y, width, height]`.
pub fn patch_mask(width: usize, height: usize, patch: [usize; 4]) -> polarfield::Result<PixelMask> {
    let [x0, y0, pw, ph] = patch;
    if pw == 0 || ph == 0 || x0 + pw > width || y0 + ph > height {
        return Err(Error::Parameter(format!(
            "patch {patch:?} does not fit a {width}x{height} image"
        )));
    }
    PixelMask::from_fn(width, height, |x, y| (x0..x0 + pw).contains(&x) && (y0..y0 + ph).contains(&y))
}

pub fn kappa_from_stacks(stacks: &SeparatedStacks, mask: &PixelMask, reference: f64) -> polarfield::Result<KappaReport> {
    let kappa = calibrate_kappa_from_specular(&stacks.specular, &stacks.rig, mask, reference)?;
    Ok(KappaReport {
        version: FORMAT_VERSION,
        kappa,
        reference_specular_albedo: reference,
        mask_pixels: mask.count(),
    })
}

pub fn calibrate_kappa(
    ctx: &Context,
    input: &Path,
    mask: Option<&Path>,
    patch: Option<[usize; 4]>,
    reference: f64,
    out: &Path,
) -> StageResult<KappaReport> {
    let stacks = load_stacks(&ctx.path(input)).stage(Stage::Solve)?;
    let (w, h) = stacks.diffuse[0].dims();
    let mask = match (mask, patch) {
        (Some(m), None) => read_pfm(ctx.path(m)).map(|img| PixelMask::from_image(&img)),
        (None, Some(p)) => patch_mask(w, h, p),
        _ => Err(Error::Config("give exactly one of a mask image or a patch".into())),
    }
    .stage(Stage::Solve)?;
    let report = kappa_from_stacks(&stacks, &mask, reference).stage(Stage::Solve)?;
    let out = ctx.path(out);
    parent_dir(&out).stage(Stage::Solve)?;
    write_json(&out, &report).stage(Stage::Solve)?;
    Ok(report)
}

// ---------------------------------------------------------------- relight

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelightSummary {
    pub lights: usize,
    pub clamped_samples: usize,
    pub outputs: Vec<String>,
}

/// Companion paths for the separated relight outputs.
pub fn component_paths(out: &Path) -> (PathBuf, PathBuf) {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    (
        out.with_file_name(format!("{stem}_diffuse.pfm")),
        out.with_file_name(format!("{stem}_specular.pfm")),
    )
}

pub fn relight_field(
    field: &ReflectanceField,
    env: &EnvironmentMap,
    cone_deg: f64,
    tiling: Tiling,
) -> polarfield::Result<SeparatedRelight> {
    let weights = env_to_weights(env, field.rig(), cone_deg)?;
    relight_separated_tiled(field, &weights, tiling)
}

pub fn write_relight(result: &SeparatedRelight, out: &Path, separated: bool) -> polarfield::Result<Vec<PathBuf>> {
    parent_dir(out)?;
    write_pfm(&result.mixed, out)?;
    let mut outputs = vec![out.to_path_buf()];
    if separated {
        let (d, s) = component_paths(out);
        write_pfm(&result.diffuse, &d)?;
        write_pfm(&result.specular, &s)?;
        outputs.extend([d, s]);
    }
    Ok(outputs)
}

pub fn read_environment(path: &Path) -> polarfield::Result<EnvironmentMap> {
    Ok(EnvironmentMap::new(read_pfm(path)?))
}

pub fn relight(
    ctx: &Context,
    field_dir: &Path,
    env: &Path,
    cone_deg: f64,
    out: &Path,
    separated: bool,
) -> StageResult<RelightSummary> {
    let field = load_field(ctx.path(field_dir)).stage(Stage::Relight)?;
    let env = read_environment(&ctx.path(env)).stage(Stage::Relight)?;
    let result = relight_field(&field, &env, cone_deg, ctx.tiling()).stage(Stage::Relight)?;
    let outputs = write_relight(&result, &ctx.path(out), separated).stage(Stage::Relight)?;
    Ok(RelightSummary {
        lights: field.light_count(),
        clamped_samples: result.clamped_samples,
        outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
    })
}

pub fn irradiance(
    ctx: &Context,
    normals: &Path,
    env: &Path,
    rig: &Path,
    cone_deg: f64,
    out: &Path,
) -> StageResult<()> {
    let normal = read_normal_map(ctx.path(normals)).stage(Stage::Relight)?;
    let env = read_environment(&ctx.path(env)).stage(Stage::Relight)?;
    let rig = read_rig(ctx.path(rig)).stage(Stage::Relight)?;
    let weights = env_to_weights(&env, &rig, cone_deg).stage(Stage::Relight)?;
    let e = irradiance_map(&normal, &weights, &rig).stage(Stage::Relight)?;
    let out = ctx.path(out);
    parent_dir(&out).stage(Stage::Relight)?;
    write_pfm(&e, &out).stage(Stage::Relight)
}

// ---------------------------------------------------------------- metrics

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub mse: f64,
    pub psnr: Psnr,
    pub peak: f64,
    /// Absent when the image is smaller than the SSIM window.
    pub ssim: Option<f64>,
    /// `tonemapped` or `raw`.
    pub ssim_space: String,
    pub pixels: usize,
}

pub fn compare_images(
    a: &RadianceImage,
    b: &RadianceImage,
    mask: Option<&PixelMask>,
    peak: f64,
    raw_ssim: bool,
) -> polarfield::Result<ImageMetrics> {
    let params = if raw_ssim { SsimParams::raw() } else { SsimParams::default() };
    let ssim = match ssim(a, b, &params) {
        Ok(v) => Some(v),
        Err(Error::Shape(_)) if a.same_dims(b) => None,
        Err(e) => return Err(e),
    };
    Ok(ImageMetrics {
        mse: mse(a, b, mask)?,
        psnr: psnr(a, b, peak, mask)?,
        peak,
        ssim,
        ssim_space: if raw_ssim { "raw" } else { "tonemapped" }.into(),
        pixels: mask.map_or(a.pixel_count(), |m| m.count()),
    })
}

pub fn metrics(
    ctx: &Context,
    a: &Path,
    b: &Path,
    mask: Option<&Path>,
    peak: f64,
    raw_ssim: bool,
    report: &Path,
) -> StageResult<ImageMetrics> {
    let a = read_pfm(ctx.path(a)).stage(Stage::Metrics)?;
    let b = read_pfm(ctx.path(b)).stage(Stage::Metrics)?;
    let mask = mask
        .map(|m| read_pfm(ctx.path(m)).map(|img| PixelMask::from_image(&img)))
        .transpose()
        .stage(Stage::Metrics)?;
    let m = compare_images(&a, &b, mask.as_ref(), peak, raw_ssim).stage(Stage::Metrics)?;
    let report = ctx.path(report);
    parent_dir(&report).stage(Stage::Metrics)?;
    io::write_json(&report, &m).stage(Stage::Metrics)?;
    Ok(m)
}

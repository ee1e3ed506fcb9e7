//! End-to-end run driven by a JSON config.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use polarfield::io::{load_field, read_json, read_rig, read_scene, sha256_file, write_json, DirLock, FORMAT_VERSION, LOCK_NAME};
use polarfield::metrics::{material_errors, MaterialErrors, Psnr};
use polarfield::relight::{env_to_weights, DEFAULT_CONE_DEG};
use polarfield::separation::separate_field;
use polarfield::synth::render_under_weights;
use polarfield::{Error, PixelMask};
use serde::{Deserialize, Serialize};

use crate::stages::{
    compare_images, kappa_from_stacks, patch_mask, provenance, read_environment, render_field, solve_config,
    solve_stacks, write_materials, write_relight, write_separated, write_truth, Context, InStage, SeparatedStacks,
    Stage, StageError, StageResult,
};

pub const REPORT_NAME: &str = "run_report.json";

fn default_cone() -> f64 {
    DEFAULT_CONE_DEG
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationConfig {
    /// `[x, y, width, height]` of a region with known specular albedo.
    pub patch: [usize; 4],
    pub reference: f64,
}

/// Paths are relative to the workdir.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    pub out: String,
    pub rig: Option<String>,
    /// Synthetic scene to render; mutually exclusive with `field`.
    #[serde(default)]
    pub scene: Option<String>,
    #[serde(default)]
    pub field: Option<String>,
    /// Multiplicative noise for synthetic fields.
    #[serde(default)]
    pub noise: f64,
    /// Overrides the global seed.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub solve: Option<String>,
    #[serde(default)]
    pub calibration: Option<CalibrationConfig>,
    #[serde(default)]
    pub environments: Vec<String>,
    #[serde(default = "default_cone")]
    pub cone_deg: f64,
    /// Optional reference image per environment.
    #[serde(default)]
    pub references: Vec<String>,
    /// Confidence above which albedo errors are scored.
    #[serde(default = "default_min_confidence")]
    pub min_confidence: f32,
}

fn default_min_confidence() -> f32 {
    0.5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: Stage,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelightReport {
    pub environment: String,
    pub output: String,
    pub clamped_samples: usize,
    /// Against the direct render (synthetic scenes) or the configured reference.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub psnr: Option<Psnr>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ssim: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub version: u32,
    pub config_sha256: String,
    pub rig_sha256: String,
    /// Input file hashes keyed by the path given in the config.
    pub inputs: BTreeMap<String, String>,
    pub seed: u64,
    pub kappa: f64,
    pub clamped_pixels: usize,
    pub ill_conditioned_pixels: usize,
    pub stages: Vec<StageTiming>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub materials: Option<MaterialErrors>,
    pub relights: Vec<RelightReport>,
    /// SHA-256 of every artifact under `out`, keyed by relative path.
    pub artifacts: BTreeMap<String, String>,
}

fn config_err(msg: impl Into<String>) -> StageError {
    StageError {
        stage: Stage::Config,
        error: Error::Config(msg.into()),
    }
}

impl RunConfig {
    pub fn validate(&self) -> StageResult<()> {
        if self.version != FORMAT_VERSION {
            return Err(config_err(format!("run config version {} is not supported", self.version)));
        }
        if self.rig.is_none() {
            return Err(config_err("run config names no rig"));
        }
        match (&self.scene, &self.field) {
            (Some(_), Some(_)) => return Err(config_err("give either a scene or a field, not both")),
            (None, None) => return Err(config_err("run config names neither a scene nor a field")),
            _ => {}
        }
        if !self.references.is_empty() && self.references.len() != self.environments.len() {
            return Err(config_err(format!(
                "{} references for {} environments",
                self.references.len(),
                self.environments.len()
            )));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(config_err(format!("noise {} must be >= 0", self.noise)));
        }
        Ok(())
    }
}

/// Output name for environment `i`, unique even when file stems repeat.
fn relight_name(i: usize, env: &str) -> String {
    let stem = Path::new(env)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "env".into());
    format!("{i:02}_{stem}")
}

fn hash_tree(root: &Path) -> polarfield::Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        let entries = fs::read_dir(&dir).map_err(|e| Error::Io {
            path: dir.clone(),
            source: e,
        })?;
        for entry in entries {
            let path = entry
                .map_err(|e| Error::Io {
                    path: dir.clone(),
                    source: e,
                })?
                .path();
            if path.is_dir() {
                stack.push(path);
                continue;
            }
            let rel = path.strip_prefix(root).unwrap_or(&path).to_string_lossy().replace('\\', "/");
            if rel == REPORT_NAME || rel == LOCK_NAME {
                continue;
            }
            out.insert(rel, sha256_file(&path)?);
        }
    }
    Ok(out)
}

struct Timer {
    stages: Vec<StageTiming>,
}

impl Timer {
    fn run<T>(&mut self, stage: Stage, f: impl FnOnce() -> StageResult<T>) -> StageResult<T> {
        eprintln!("[run] {stage} ...");
        let t = Instant::now();
        let out = f()?;
        let seconds = t.elapsed().as_secs_f64();
        eprintln!("[run] {stage} done in {seconds:.2}s");
        self.stages.push(StageTiming { stage, seconds });
        Ok(out)
    }
}

pub fn load_run_config(path: &Path) -> StageResult<RunConfig> {
    let cfg: RunConfig = read_json(path).stage(Stage::Config)?;
    cfg.validate()?;
    Ok(cfg)
}

/// Runs every configured stage and writes `run_report.json` into the output directory.
pub fn run_pipeline(ctx: &Context, config_path: &Path) -> StageResult<RunReport> {
    let config_path = ctx.path(config_path);
    let cfg = load_run_config(&config_path)?;
    let seed = cfg.seed.unwrap_or(ctx.seed);
    let rig_rel = cfg.rig.clone().unwrap_or_default();
    let rig_path = ctx.path(&rig_rel);
    let rig = read_rig(&rig_path).stage(Stage::Config)?;
    let solve_cfg = solve_config(ctx, cfg.solve.as_deref().map(Path::new), None).stage(Stage::Config)?;
    let scene = cfg
        .scene
        .as_ref()
        .map(|s| read_scene(ctx.path(s)))
        .transpose()
        .stage(Stage::Config)?;

    let mut inputs = BTreeMap::new();
    let mut hash_input = |key: &str, path: &Path| -> StageResult<()> {
        inputs.insert(key.to_string(), sha256_file(path).stage(Stage::Config)?);
        Ok(())
    };
    hash_input(&rig_rel, &rig_path)?;
    for p in cfg.scene.iter().chain(&cfg.solve).chain(&cfg.environments).chain(&cfg.references) {
        hash_input(p, &ctx.path(p))?;
    }
    if let Some(f) = &cfg.field {
        let manifest = polarfield::io::manifest_path(ctx.path(f));
        hash_input(f, &manifest)?;
    }

    let out = ctx.path(&cfg.out);
    let _lock = DirLock::acquire(&out).stage(Stage::Config)?;
    let mut timer = Timer { stages: Vec::new() };

    let field = match &scene {
        Some(scene) => timer.run(Stage::Synth, || {
            let field = render_field(scene, rig.clone(), cfg.noise, seed).stage(Stage::Synth)?;
            polarfield::io::save_field(&field, out.join("field"), Some(provenance(seed, cfg.noise)))
                .stage(Stage::Synth)?;
            write_truth(scene, &out.join("truth")).stage(Stage::Synth)?;
            Ok(field)
        })?,
        None => {
            let field = load_field(ctx.path(cfg.field.as_deref().unwrap_or_default())).stage(Stage::Config)?;
            if *field.rig() != rig {
                return Err(config_err("the field's rig differs from the configured rig"));
            }
            field
        }
    };

    let stacks = timer.run(Stage::Separate, || {
        let sep = separate_field(&field).stage(Stage::Separate)?;
        write_separated(&sep, field.rig(), field.view_id(), &out.join("separated")).stage(Stage::Separate)?;
        let clamped = sep.total_clamped();
        Ok((
            SeparatedStacks {
                rig: field.rig().clone(),
                diffuse: sep.diffuse,
                specular: sep.specular,
            },
            clamped,
        ))
    })?;
    let (stacks, clamped_pixels) = stacks;

    let (maps, summary) = timer.run(Stage::Solve, || {
        let mut solve_cfg = solve_cfg.clone();
        if let Some(cal) = &cfg.calibration {
            let (w, h) = field.dims();
            let mask = patch_mask(w, h, cal.patch).stage(Stage::Solve)?;
            let report = kappa_from_stacks(&stacks, &mask, cal.reference).stage(Stage::Solve)?;
            write_json(out.join("kappa.json"), &report).stage(Stage::Solve)?;
            solve_cfg.kappa = report.kappa;
        }
        let (maps, summary) = solve_stacks(&stacks, &solve_cfg).stage(Stage::Solve)?;
        write_materials(&maps, &summary, &out.join("materials")).stage(Stage::Solve)?;
        Ok((maps, summary))
    })?;
    drop(stacks);

    let mut relights = Vec::new();
    let mut relit_images = Vec::new();
    timer.run(Stage::Relight, || {
        for (i, env_rel) in cfg.environments.iter().enumerate() {
            let env = read_environment(&ctx.path(env_rel)).stage(Stage::Relight)?;
            let weights = env_to_weights(&env, field.rig(), cfg.cone_deg).stage(Stage::Relight)?;
            let result =
                polarfield::relight::relight_separated_tiled(&field, &weights, ctx.tiling()).stage(Stage::Relight)?;
            let name = relight_name(i, env_rel);
            let out_path = out.join("relight").join(format!("{name}.pfm"));
            write_relight(&result, &out_path, true).stage(Stage::Relight)?;
            relights.push(RelightReport {
                environment: env_rel.clone(),
                output: format!("relight/{name}.pfm"),
                clamped_samples: result.clamped_samples,
                psnr: None,
                ssim: None,
            });
            relit_images.push((name, weights, result.mixed));
        }
        Ok(())
    })?;

    let materials = timer.run(Stage::Metrics, || {
        let materials = scene
            .as_ref()
            .map(|s| material_errors(s, &maps, cfg.min_confidence))
            .transpose()
            .stage(Stage::Metrics)?;
        for (i, (name, weights, relit)) in relit_images.iter().enumerate() {
            let reference = match (&scene, cfg.references.get(i)) {
                (_, Some(r)) => Some(polarfield::io::read_pfm(ctx.path(r)).stage(Stage::Metrics)?),
                (Some(scene), None) => {
                    let direct = render_under_weights(scene, field.rig(), weights).stage(Stage::Metrics)?;
                    polarfield::io::write_pfm(&direct.mixed, out.join("relight").join(format!("{name}_reference.pfm")))
                        .stage(Stage::Metrics)?;
                    Some(direct.mixed)
                }
                (None, None) => None,
            };
            if let Some(reference) = reference {
                let m = compare_images(relit, &reference, None::<&PixelMask>, 1.0, false).stage(Stage::Metrics)?;
                relights[i].psnr = Some(m.psnr);
                relights[i].ssim = m.ssim;
            }
        }
        Ok(materials)
    })?;

    let artifacts = hash_tree(&out).stage(Stage::Metrics)?;
    let report = RunReport {
        version: FORMAT_VERSION,
        config_sha256: sha256_file(&config_path).stage(Stage::Config)?,
        rig_sha256: inputs[&rig_rel].clone(),
        inputs,
        seed,
        kappa: summary.config.kappa,
        clamped_pixels,
        ill_conditioned_pixels: summary.ill_conditioned_pixels,
        stages: timer.stages,
        materials,
        relights,
        artifacts,
    };
    write_json(out.join(REPORT_NAME), &report).stage(Stage::Metrics)?;
    Ok(report)
}

/// Relative path of the report for a config's output directory.
pub fn report_path(ctx: &Context, cfg: &RunConfig) -> PathBuf {
    ctx.path(&cfg.out).join(REPORT_NAME)
}

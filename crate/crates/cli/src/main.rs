use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use polarfield::relight::DEFAULT_CONE_DEG;
use polarfield_cli::stages::{self, Context, StageResult};
use polarfield_cli::{run_pipeline, Stage, StageError};

#[derive(Parser, Debug)]
#[command(name = "polarfield", version, about = "Polarized OLAT reflectance-field pipeline")]
struct Cli {
    /// Worker threads; defaults to the hardware parallelism.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Tile edge length in pixels; results do not depend on it.
    #[arg(long, global = true)]
    tile: Option<usize>,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Base directory for every relative path.
    #[arg(long, global = true, default_value = ".")]
    workdir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a synthetic scene into a field directory.
    Synth {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        rig: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Multiplicative Gaussian noise level.
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        /// Also write the ground-truth maps here.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Split a field into diffuse and specular stacks.
    Separate {
        #[arg(long)]
        field: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Recover normals and albedos from a field or separated directory.
    Solve {
        #[arg(long, alias = "field", alias = "separated")]
        input: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        kappa: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the specular scale against a region of known specular albedo.
    CalibrateKappa {
        #[arg(long, alias = "field", alias = "separated")]
        input: PathBuf,
        /// PFM whose luminance > 0.5 selects the region.
        #[arg(long, conflicts_with = "patch")]
        mask: Option<PathBuf>,
        /// Region as x,y,width,height.
        #[arg(long, value_delimiter = ',')]
        patch: Option<Vec<usize>>,
        #[arg(long)]
        reference: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Relight a field under an equirectangular environment map.
    Relight {
        #[arg(long)]
        field: PathBuf,
        #[arg(long)]
        env: PathBuf,
        #[arg(long, default_value_t = DEFAULT_CONE_DEG)]
        cone: f64,
        #[arg(long)]
        out: PathBuf,
        /// Also write the diffuse and specular relit components.
        #[arg(long)]
        separated: bool,
    },
    /// Irradiance of a normal map under an environment.
    Irradiance {
        #[arg(long)]
        normals: PathBuf,
        #[arg(long)]
        env: PathBuf,
        #[arg(long)]
        rig: PathBuf,
        #[arg(long, default_value_t = DEFAULT_CONE_DEG)]
        cone: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare two images.
    Metrics {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long)]
        mask: Option<PathBuf>,
        #[arg(long, default_value_t = 1.0)]
        peak: f64,
        /// SSIM on raw values instead of tonemapped ones.
        #[arg(long)]
        raw_ssim: bool,
        #[arg(long)]
        report: PathBuf,
    },
    /// Run the whole pipeline from a JSON config.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
}

fn dispatch(ctx: &Context, command: Command) -> StageResult<String> {
    Ok(match command {
        Command::Synth {
            scene,
            rig,
            out,
            noise,
            truth,
        } => {
            let s = stages::synth(ctx, &scene, &rig, &out, noise, truth.as_deref())?;
            format!("{} lights at {}x{}", s.lights, s.width, s.height)
        }
        Command::Separate { field, out } => {
            let s = stages::separate(ctx, &field, &out)?;
            format!("{} lights, {} clamped samples", s.lights, s.total_clamped)
        }
        Command::Solve {
            input,
            config,
            kappa,
            out,
        } => {
            let s = stages::solve(ctx, &input, config.as_deref(), kappa, &out)?;
            format!(
                "{} pixels solved, {} ill-conditioned",
                s.solved_pixels, s.ill_conditioned_pixels
            )
        }
        Command::CalibrateKappa {
            input,
            mask,
            patch,
            reference,
            out,
        } => {
            let patch = match patch.as_deref() {
                None => None,
                Some(&[x, y, w, h]) => Some([x, y, w, h]),
                Some(p) => {
                    return Err(StageError {
                        stage: Stage::Config,
                        error: polarfield::Error::Config(format!("--patch takes x,y,width,height, got {p:?}")),
                    })
                }
            };
            let r = stages::calibrate_kappa(ctx, &input, mask.as_deref(), patch, reference, &out)?;
            format!("kappa {} over {} pixels", r.kappa, r.mask_pixels)
        }
        Command::Relight {
            field,
            env,
            cone,
            out,
            separated,
        } => {
            let s = stages::relight(ctx, &field, &env, cone, &out, separated)?;
            format!("{} outputs, {} clamped samples", s.outputs.len(), s.clamped_samples)
        }
        Command::Irradiance {
            normals,
            env,
            rig,
            cone,
            out,
        } => {
            stages::irradiance(ctx, &normals, &env, &rig, cone, &out)?;
            "irradiance written".into()
        }
        Command::Metrics {
            a,
            b,
            mask,
            peak,
            raw_ssim,
            report,
        } => {
            let m = stages::metrics(ctx, &a, &b, mask.as_deref(), peak, raw_ssim, &report)?;
            format!("mse {:e}, psnr {:?}", m.mse, m.psnr)
        }
        Command::Run { config } => {
            let r = run_pipeline(ctx, &config)?;
            format!("{} artifacts", r.artifacts.len())
        }
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        pool = pool.num_threads(n);
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker threads: {e}");
            return ExitCode::from(2);
        }
    };
    let ctx = Context {
        workdir: cli.workdir,
        tile: cli.tile,
        seed: cli.seed,
    };
    let t = Instant::now();
    match pool.install(|| dispatch(&ctx, cli.command)) {
        Ok(msg) => {
            eprintln!("{msg} ({:.2}s)", t.elapsed().as_secs_f64());
            ExitCode::SUCCESS
        }
        Err(e @ StageError { .. }) => {
            eprintln!("error: {e}");
            ExitCode::from(e.stage.exit_code() as u8)
        }
    }
}

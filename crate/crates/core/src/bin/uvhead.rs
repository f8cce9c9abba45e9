use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use uvhead::checks::{diffusion_check, grad_check, knn_check, GRAD_TOLERANCE};
use uvhead::diffusion::{
    cosine_schedule, denormalize_avatar, export_for_diffusion, inpaint_sample, reverse_sample, AnalyticGaussDenoiser,
};
use uvhead::edit::{apply_expression_offset, region_transfer, ChannelSelector};
use uvhead::fit::{fit_scene, FitConfig, FitMode, PayloadKind};
use uvhead::io::{
    generate_toy_dataset, load_anchor_grid, load_avatar, load_cameras, load_dataset, load_mask, load_mlp, mlp_sidecar,
    save_avatar, save_mlp, write_atomic, write_pgm, write_ppm, ToyKind, ToySpec,
};
use uvhead::render::render_image;
use uvhead::{Error, RenderConfig};

#[derive(Parser)]
#[command(name = "uvhead", version, about = "UV-grid Gaussian head avatars: fit, render, edit, diffuse")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit an avatar to a dataset directory.
    Fit(FitArgs),
    /// Render one camera of a camera file.
    Render(RenderArgs),
    /// Region transfer or expression offset.
    Edit(EditArgs),
    /// Sample or inpaint with an analytic denoiser.
    Diffuse(DiffuseArgs),
    /// Run an oracle suite; exits with 4 on failure.
    Check(CheckArgs),
    /// Write a procedural toy dataset.
    Generate(GenerateArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Direct,
    Latent,
}

#[derive(Clone, Copy, ValueEnum)]
enum PayloadArg {
    Triplane,
    Vector,
}

#[derive(Args)]
struct FitArgs {
    dataset: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1000)]
    iters: usize,
    #[arg(long, value_enum, default_value = "direct")]
    mode: ModeArg,
    #[arg(long, default_value_t = 3)]
    k: usize,
    #[arg(long, value_enum, default_value = "triplane")]
    payload: PayloadArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Square patch side in pixels.
    #[arg(long, default_value_t = 16)]
    patch: usize,
    /// JSON fit configuration; flags above override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Write the per-iteration loss, one value per line.
    #[arg(long)]
    history: Option<PathBuf>,
}

#[derive(Args)]
struct RenderArgs {
    avatar: PathBuf,
    #[arg(long)]
    camera: PathBuf,
    #[arg(long, default_value_t = 0)]
    view: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    depth: Option<PathBuf>,
    #[arg(long)]
    alpha: Option<PathBuf>,
    /// Shading network; defaults to the avatar's sidecar.
    #[arg(long)]
    mlp: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    k: usize,
    #[arg(long, default_value_t = 32)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Depth value mapped to white in the depth image.
    #[arg(long, default_value_t = 1.0)]
    depth_scale: f64,
}

#[derive(Args)]
struct EditArgs {
    target: PathBuf,
    /// Avatar whose masked texels are copied in.
    #[arg(long, requires = "mask", conflicts_with = "expr")]
    transfer: Option<PathBuf>,
    #[arg(long)]
    mask: Option<PathBuf>,
    #[arg(long, default_value = "both")]
    channels: ChannelSelector,
    /// Target vertices: an avatar file (its anchors) or an anchor text file.
    #[arg(long)]
    expr: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum DiffuseOp {
    Sample,
    Inpaint,
}

#[derive(Args)]
struct DiffuseArgs {
    op: DiffuseOp,
    #[arg(long, default_value = "cosine")]
    schedule: String,
    /// Schedule length T.
    #[arg(long, default_value_t = 1000)]
    steps: usize,
    /// Reverse steps taken, evenly strided; defaults to T.
    #[arg(long)]
    sample_steps: Option<usize>,
    /// `analytic:m,s` for elementwise N(m, s²) data.
    #[arg(long, default_value = "analytic:0,0.5")]
    denoiser: String,
    /// Avatar providing dimensions and anchors (and the known values when
    /// inpainting).
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    mask: Option<PathBuf>,
    #[arg(long, default_value = "both")]
    channels: ChannelSelector,
    /// Require the input's anchors to equal these neutral vertices.
    #[arg(long)]
    neutral: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum Suite {
    Grad,
    Knn,
    Diffusion,
}

#[derive(Args)]
struct CheckArgs {
    suite: Suite,
    #[arg(long, default_value_t = 11)]
    seed: u64,
}

#[derive(Args)]
struct GenerateArgs {
    out: PathBuf,
    #[arg(long, default_value = "checker-sphere")]
    kind: ToyKind,
    #[arg(long, default_value_t = 16)]
    views: usize,
    #[arg(long, default_value_t = 32)]
    resolution: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

enum Failure {
    Error(Error),
    Check(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Error(e)
    }
}

type CliResult = std::result::Result<(), Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Fit(a) => fit(a),
        Command::Render(a) => render(a),
        Command::Edit(a) => edit(a),
        Command::Diffuse(a) => diffuse(a),
        Command::Check(a) => check(a),
        Command::Generate(a) => generate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Check(msg)) => {
            eprintln!("check failed: {msg}");
            ExitCode::from(4)
        }
        Err(Failure::Error(e)) => {
            eprintln!("error: {e}");
            if e.is_input_error() {
                ExitCode::from(2)
            } else {
                ExitCode::from(3)
            }
        }
    }
}

fn copy_sidecar(from: &Path, to: &Path) -> uvhead::Result<()> {
    let src = mlp_sidecar(from);
    if src.exists() {
        save_mlp(&load_mlp(&src)?, mlp_sidecar(to))?;
    }
    Ok(())
}

fn fit(a: FitArgs) -> CliResult {
    let data = load_dataset(&a.dataset)?;
    let mut cfg = match &a.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::Io {
                path: p.clone(),
                source: e,
            })?;
            serde_json::from_str(&text).map_err(Error::from)?
        }
        None => FitConfig {
            render: data.spec.render.clone(),
            ..FitConfig::default()
        },
    };
    cfg.iterations = a.iters;
    cfg.seed = a.seed;
    cfg.knn_k = Some(a.k);
    cfg.patch_size = a.patch;
    cfg.mode = match a.mode {
        ModeArg::Direct => FitMode::Direct,
        ModeArg::Latent => FitMode::Latent,
    };
    cfg.payload = match a.payload {
        PayloadArg::Triplane => PayloadKind::TriPlane,
        PayloadArg::Vector => PayloadKind::Vector,
    };
    let result = fit_scene(&data.views, &data.anchors, &cfg)?;
    save_avatar(&result.avatar, &a.out)?;
    save_mlp(&result.mlp, mlp_sidecar(&a.out))?;
    if let Some(h) = &a.history {
        let text: String = result.history.iter().map(|v| format!("{v}\n")).collect();
        write_atomic(h, text.as_bytes())?;
    }
    if let Some(last) = result.history.last() {
        log::info!("final loss {last:.6}");
    }
    Ok(())
}

fn render(a: RenderArgs) -> CliResult {
    let avatar = load_avatar(&a.avatar)?;
    let mlp = load_mlp(a.mlp.clone().unwrap_or_else(|| mlp_sidecar(&a.avatar)))?;
    let cams = load_cameras(&a.camera)?;
    let cam = cams
        .get(a.view)
        .ok_or_else(|| Error::InvalidArgument(format!("view {} out of {} cameras", a.view, cams.len())))?;
    let cfg = RenderConfig {
        knn_k: a.k,
        samples_per_ray: a.samples,
        seed: a.seed,
        ..RenderConfig::default()
    };
    let img = render_image(&avatar, &mlp, cam, &cfg)?;
    write_ppm(&a.out, img.width, img.height, &img.color)?;
    if let Some(p) = &a.depth {
        write_pgm(p, img.width, img.height, &img.depth, a.depth_scale)?;
    }
    if let Some(p) = &a.alpha {
        write_pgm(p, img.width, img.height, &img.alpha, 1.0)?;
    }
    Ok(())
}

fn load_vertices(path: &Path) -> uvhead::Result<Vec<uvhead::Vec3>> {
    if path.extension().is_some_and(|e| e == "guv") {
        Ok(load_avatar(path)?.anchors)
    } else {
        Ok(load_anchor_grid(path)?.positions)
    }
}

fn edit(a: EditArgs) -> CliResult {
    let target = load_avatar(&a.target)?;
    let out = match (&a.transfer, &a.expr) {
        (Some(src), None) => {
            let source = load_avatar(src)?;
            let mask = load_mask(a.mask.as_ref().expect("clap requires --mask"), a.channels)?;
            region_transfer(&target, &source, &mask)?
        }
        (None, Some(v)) => apply_expression_offset(&target, &load_vertices(v)?)?,
        _ => {
            return Err(Error::InvalidArgument("edit needs exactly one of --transfer or --expr".into()).into());
        }
    };
    save_avatar(&out, &a.out)?;
    copy_sidecar(&a.target, &a.out)?;
    Ok(())
}

fn parse_denoiser(spec: &str) -> uvhead::Result<AnalyticGaussDenoiser> {
    let bad = || Error::InvalidArgument(format!("denoiser must be `analytic:m,s`, got {spec:?}"));
    let params = spec.strip_prefix("analytic:").ok_or_else(bad)?;
    let (m, s) = params.split_once(',').ok_or_else(bad)?;
    AnalyticGaussDenoiser::new(m.trim().parse().map_err(|_| bad())?, s.trim().parse().map_err(|_| bad())?)
}

fn diffuse(a: DiffuseArgs) -> CliResult {
    if a.schedule != "cosine" {
        return Err(Error::InvalidArgument(format!("unknown schedule {:?}", a.schedule)).into());
    }
    let sched = cosine_schedule(a.steps)?;
    let denoiser = parse_denoiser(&a.denoiser)?;
    let template = load_avatar(&a.input)?;
    let neutral = a.neutral.as_deref().map(load_vertices).transpose()?;
    let known = export_for_diffusion(&template, neutral.as_deref())?;
    let steps = a.sample_steps.unwrap_or(a.steps);
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let tensor = match a.op {
        DiffuseOp::Sample => reverse_sample(&sched, &denoiser, known.shape(), &mut rng, steps)?,
        DiffuseOp::Inpaint => {
            let path = a
                .mask
                .as_ref()
                .ok_or_else(|| Error::InvalidArgument("inpaint needs --mask".into()))?;
            let mask = load_mask(path, a.channels)?;
            mask.check_avatar(&template)?;
            let elements = mask.element_mask(template.res(), template.channels());
            inpaint_sample(&sched, &denoiser, &known, &elements, &mut rng, steps)?
        }
    };
    let avatar = denormalize_avatar(&tensor, &template)?;
    save_avatar(&avatar, &a.out)?;
    copy_sidecar(&a.input, &a.out)?;
    Ok(())
}

fn check(a: CheckArgs) -> CliResult {
    match a.suite {
        Suite::Grad => {
            let outcomes = grad_check(a.seed, 24)?;
            let mut ok = true;
            for o in &outcomes {
                for g in &o.groups {
                    println!(
                        "{:<7} {:<9} checked {:>3} excluded {:>2} max rel err {:.3e}",
                        o.mode,
                        g.kind.name(),
                        g.checked,
                        g.excluded,
                        g.max_rel_error
                    );
                }
                ok &= o.passed();
            }
            if !ok {
                return Err(Failure::Check(format!("gradient error above {GRAD_TOLERANCE:e}")));
            }
        }
        Suite::Knn => {
            let r = knn_check(a.seed, 1024, 1000, 3)?;
            println!("knn: {} queries, {} mismatches", r.queries, r.mismatches);
            if r.mismatches > 0 {
                return Err(Failure::Check(format!("{} KNN mismatches", r.mismatches)));
            }
        }
        Suite::Diffusion => {
            let r = diffusion_check(a.seed, 10_000)?;
            println!(
                "vp err {:.2e}  transition err {:.2e}  sampler mean {:.4} std {:.4}  fold round trip {}",
                r.vp_error, r.transition_error, r.sampler_mean, r.sampler_std, r.fold_round_trip
            );
            if !r.passed() {
                return Err(Failure::Check("diffusion oracle out of tolerance".into()));
            }
        }
    }
    println!("ok");
    Ok(())
}

fn generate(a: GenerateArgs) -> CliResult {
    let spec = ToySpec {
        views: a.views,
        resolution: a.resolution,
        seed: a.seed,
        ..ToySpec::new(a.kind)
    };
    generate_toy_dataset(&spec, &a.out)?;
    println!("wrote {} views to {}", spec.views, a.out.display());
    Ok(())
}

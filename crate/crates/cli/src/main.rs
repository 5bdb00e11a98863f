//! `canonsplat`: synthetic data, initialization, two-stage fitting, rendering,
//! animation and evaluation from the command line.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use canonsplat::anim::{animate, read_pose_sequence, write_pose_sequence, Pose};
use canonsplat::audit::{audit_field, audit_field_cloud, field_gradcheck, render_gradcheck, smooth_scene, GradCheckReport};
use canonsplat::deform::save_field;
use canonsplat::gaussian::{ply_export, ply_import};
use canonsplat::harness::{
    evaluate, figure_skinning_grid, initial_cloud, orbit_camera, read_dataset, skeleton, synth_dataset,
    template_figure, turntable_cameras, write_dataset, write_eval_csv, write_png, InitConfig, InitMethod, Overrides,
    SynthConfig, BONE_NAMES,
};
use canonsplat::mesh::{read_obj, write_obj};
use canonsplat::recon::{extract_canonical, fit_with_observer, write_loss_csv, FitConfig, FitEvent};
use canonsplat::render::{render, RenderSettings};

#[derive(Parser)]
#[command(name = "canonsplat", version, about = "Canonical Gaussian avatars from inconsistent multi-view images")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset folder (views, cameras, ground truth).
    Synth(SynthArgs),
    /// Fit the template to a dataset and sample an initial Gaussian cloud.
    Init(InitArgs),
    /// Run the two-stage optimization and extract the canonical avatar.
    Fit(FitArgs),
    /// Render turntable PNGs of a Gaussian PLY.
    Render(RenderArgs),
    /// Pose a canonical PLY through a pose sequence and render each frame.
    Animate(AnimateArgs),
    /// PSNR of a PLY against the dataset's clean ground-truth renders.
    Eval(EvalArgs),
    /// Finite-difference audits of the renderer and deformation backward passes.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    views: Option<usize>,
    #[arg(long)]
    resolution: Option<usize>,
    /// Positional inconsistency amplitude in scene units.
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    jitter: Option<f64>,
    #[arg(long)]
    gaussians: Option<usize>,
    /// key=value overrides applied before the flags above.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct InitArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// random | template | coarse
    #[arg(long, default_value = "coarse")]
    method: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 2000)]
    points: usize,
    /// Coarse-mesh fit iterations.
    #[arg(long, default_value_t = 500)]
    iters: usize,
    /// Template OBJ; the built-in capsule figure when absent.
    #[arg(long)]
    template: Option<PathBuf>,
    /// Where to write the fitted coarse mesh.
    #[arg(long)]
    mesh_out: Option<PathBuf>,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    init: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    stage1_iters: Option<usize>,
    #[arg(long)]
    stage2_iters: Option<usize>,
    /// Keep the deformation at identity (static 3DGS baseline).
    #[arg(long = "static")]
    freeze: bool,
    #[arg(long)]
    checkpoint_every: Option<usize>,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    ply: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 8)]
    views: usize,
    #[arg(long, default_value_t = 128)]
    resolution: usize,
}

#[derive(Args)]
struct AnimateArgs {
    #[arg(long)]
    ply: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Pose sequence file; see the README for the format.
    #[arg(long, conflicts_with = "demo")]
    poses: Option<PathBuf>,
    /// Use a built-in waving sequence of this many frames instead of --poses.
    #[arg(long)]
    demo: Option<usize>,
    #[arg(long, default_value_t = 128)]
    resolution: usize,
    #[arg(long, default_value_t = 64)]
    grid_res: usize,
    #[arg(long, default_value_t = 50)]
    smoothing_iters: usize,
    #[arg(long, default_value_t = 0.0)]
    azimuth: f64,
    #[arg(long, default_value_t = 0.0)]
    elevation: f64,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    ply: PathBuf,
    /// Ground-truth PLY; defaults to `<data>/gt.ply`.
    #[arg(long)]
    reference: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 5)]
    seeds: u64,
    #[arg(long, default_value_t = 32)]
    size: usize,
    #[arg(long, default_value_t = 10)]
    gaussians: usize,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return if usage { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Synth(a) => synth(a),
        Command::Init(a) => init(a),
        Command::Fit(a) => fit(a),
        Command::Render(a) => render_turntable(a),
        Command::Animate(a) => animate_cmd(a),
        Command::Eval(a) => eval(a),
        Command::Gradcheck(a) => gradcheck(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn synth(a: SynthArgs) -> Result<()> {
    let mut cfg = SynthConfig {
        seed: a.seed,
        ..SynthConfig::default()
    };
    if let Some(path) = &a.config {
        Overrides::read(path)?.apply_synth(&mut cfg)?;
    }
    cfg.n_views = a.views.unwrap_or(cfg.n_views);
    cfg.resolution = a.resolution.unwrap_or(cfg.resolution);
    cfg.inconsistency_sigma = a.sigma.unwrap_or(cfg.inconsistency_sigma);
    cfg.color_jitter = a.jitter.unwrap_or(cfg.color_jitter);
    cfg.n_gaussians_gt = a.gaussians.unwrap_or(cfg.n_gaussians_gt);
    cfg.validate()?;
    let out = synth_dataset(&cfg)?;
    create_dir(&a.out)?;
    write_dataset(&out.dataset, &a.out)?;
    ply_export(&out.gt_cloud, a.out.join("gt.ply"))?;
    write_obj(&out.template.mesh, &a.out.join("template.obj"))?;
    info!("wrote {} views to {}", out.dataset.len(), a.out.display());
    Ok(())
}

fn init(a: InitArgs) -> Result<()> {
    let method: InitMethod = a.method.parse()?;
    let dataset = read_dataset(&a.data)?;
    let template = match &a.template {
        Some(p) => read_obj(p)?,
        None => template_figure().mesh,
    };
    let mut cfg = InitConfig {
        n_points: a.points,
        seed: a.seed,
        ..InitConfig::default()
    };
    cfg.mesh.iters = a.iters;
    let (cloud, mesh) = initial_cloud(method, &dataset, &template, &cfg)?;
    ply_export(&cloud, &a.out)?;
    if let (Some(path), Some(m)) = (&a.mesh_out, &mesh) {
        write_obj(m, path)?;
    }
    info!("wrote {} Gaussians to {}", cloud.len(), a.out.display());
    Ok(())
}

fn fit(a: FitArgs) -> Result<()> {
    let dataset = read_dataset(&a.data)?;
    let init = ply_import(&a.init)?;
    let mut cfg = FitConfig {
        seed: a.seed,
        ..FitConfig::default()
    };
    if let Some(path) = &a.config {
        Overrides::read(path)?.apply_fit(&mut cfg)?;
    }
    cfg.stage1_iters = a.stage1_iters.unwrap_or(cfg.stage1_iters);
    cfg.stage2_iters = a.stage2_iters.unwrap_or(cfg.stage2_iters);
    cfg.freeze_field |= a.freeze;
    if a.checkpoint_every.is_some() {
        cfg.checkpoint_every = a.checkpoint_every;
    }
    if cfg.checkpoint_every.is_some() {
        cfg.checkpoint_dir = Some(a.out.join("checkpoints"));
    }
    create_dir(&a.out)?;
    let total = cfg.stage1_iters + cfg.stage2_iters;
    let result = fit_with_observer(&dataset, &init, &cfg, |e| {
        if let FitEvent::Iteration(r) = e {
            if (r.iteration + 1) % 500 == 0 || r.iteration + 1 == total {
                info!(
                    "iteration {}/{} stage {} loss {:.5} gaussians {}",
                    r.iteration + 1,
                    total,
                    r.stage,
                    r.total,
                    r.n_gaussians
                );
            }
        }
    })?;
    let canonical = extract_canonical(&result.cloud, &result.field)?;
    ply_export(&canonical, a.out.join("canonical.ply"))?;
    ply_export(&result.cloud, a.out.join("cloud.ply"))?;
    save_field(&result.field, &a.out.join("field.bin"))?;
    write_loss_csv(&result.log, &a.out.join("loss.csv"))?;
    info!("wrote canonical.ply with {} Gaussians to {}", canonical.len(), a.out.display());
    Ok(())
}

fn render_turntable(a: RenderArgs) -> Result<()> {
    let cloud = ply_import(&a.ply)?;
    create_dir(&a.out)?;
    for (i, cam) in turntable_cameras(a.views, a.resolution)?.iter().enumerate() {
        let out = render(&cloud, cam, &RenderSettings::default())?;
        write_png(&out.rgb, &a.out.join(format!("view_{i:03}.png")), 0.0, 1.0)?;
    }
    info!("wrote {} views to {}", a.views, a.out.display());
    Ok(())
}

/// Arms swing up and down, the head nods, the whole body turns slowly.
fn demo_poses(frames: usize) -> Vec<Pose> {
    let idx = |name: &str| BONE_NAMES.iter().position(|b| *b == name).expect("bone exists");
    (0..frames)
        .map(|f| {
            let phase = std::f64::consts::TAU * f as f64 / frames.max(1) as f64;
            let mut p = Pose::identity(BONE_NAMES.len());
            p.set_axis_angle(idx("l_arm"), [0.0, 0.0, 1.0], 0.8 * phase.sin());
            p.set_axis_angle(idx("r_arm"), [0.0, 0.0, 1.0], -0.8 * phase.sin());
            p.set_axis_angle(idx("head"), [1.0, 0.0, 0.0], 0.3 * (2.0 * phase).sin());
            p.set_axis_angle(idx("l_leg"), [1.0, 0.0, 0.0], 0.4 * phase.sin());
            p.set_axis_angle(idx("r_leg"), [1.0, 0.0, 0.0], -0.4 * phase.sin());
            p.set_axis_angle(idx("root"), [0.0, 1.0, 0.0], 0.25 * phase);
            p
        })
        .collect()
}

fn animate_cmd(a: AnimateArgs) -> Result<()> {
    let canonical = ply_import(&a.ply)?;
    let skel = skeleton();
    let poses = match (&a.poses, a.demo) {
        (Some(path), None) => read_pose_sequence(path, skel.len())?,
        (None, Some(n)) => demo_poses(n),
        _ => bail!("pass exactly one of --poses or --demo"),
    };
    create_dir(&a.out)?;
    if a.demo.is_some() {
        write_pose_sequence(&poses, &a.out.join("poses.txt"))?;
    }
    let grid = figure_skinning_grid(a.grid_res, a.smoothing_iters)?;
    let cam = orbit_camera(a.resolution, a.azimuth, a.elevation)?;
    for (i, pose) in poses.iter().enumerate() {
        let posed = animate(&canonical, &grid, &skel, pose)?;
        let out = render(&posed, &cam, &RenderSettings::default())?;
        write_png(&out.rgb, &a.out.join(format!("frame_{i:04}.png")), 0.0, 1.0)?;
    }
    info!("wrote {} frames to {}", poses.len(), a.out.display());
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let dataset = read_dataset(&a.data)?;
    let cloud = ply_import(&a.ply)?;
    let reference = ply_import(a.reference.unwrap_or_else(|| a.data.join("gt.ply")))?;
    let cams: Vec<_> = dataset.views.iter().map(|v| v.camera.clone()).collect();
    let rows = evaluate(&cloud, &reference, &cams)?;
    for r in &rows {
        println!("view {:3}  psnr {:7.3} dB", r.view, r.psnr);
    }
    let mean = rows.iter().map(|r| r.psnr).sum::<f64>() / rows.len() as f64;
    let min = rows.iter().map(|r| r.psnr).fold(f64::INFINITY, f64::min);
    println!("mean {mean:.3} dB  min {min:.3} dB");
    if let Some(out) = &a.out {
        write_eval_csv(&rows, out)?;
    }
    Ok(())
}

fn gradcheck(a: GradcheckArgs) -> Result<()> {
    let mut render_report = GradCheckReport::default();
    let mut field_report = GradCheckReport::default();
    for seed in 0..a.seeds {
        let (cloud, cam, settings) = smooth_scene(seed, a.gaussians, a.size);
        render_report.merge(render_gradcheck(&cloud, &cam, &settings, seed)?);
        let field = audit_field(seed);
        let cloud = audit_field_cloud(seed, 4);
        field_report.merge(field_gradcheck(&field, &cloud, 0.37, seed)?);
    }
    for (name, r) in [("render_backward", &render_report), ("field_backward", &field_report)] {
        println!(
            "{name}: {} entries, max relative error {:.3e}, {} failures",
            r.checked,
            r.max_rel_error,
            r.failures.len()
        );
        for f in r.failures.iter().take(10) {
            println!("  {}: analytic {:.6e} numeric {:.6e}", f.param, f.analytic, f.numeric);
        }
    }
    if render_report.passed() && field_report.passed() {
        Ok(())
    } else {
        bail!("gradient check failed")
    }
}

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fluidrecon::config::RunConfig;
use fluidrecon::pipeline::{self, PARAMS_FILE};
use fluidrecon::sim::{simulate, ScenarioSpec, METRICS_HEADER};
use fluidrecon::{Error, GridSpec, HyperParams, Result, Vec3};

/// Liquid reconstruction from binary silhouettes.
///
/// Log verbosity is read from FLUIDRECON_LOG (e.g. `info`, `debug`).
#[derive(Parser)]
#[command(name = "fluidrecon", version)]
struct Cli {
    /// Worker threads (default: all available cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario and write masks, cameras, SDF and ground-truth particles.
    Simulate {
        /// Scenario TOML file.
        scenario: PathBuf,
        /// Output directory.
        out: PathBuf,
    },
    /// Reconstruct particles from the masks named in a run configuration.
    Reconstruct {
        /// Run configuration TOML file.
        config: PathBuf,
        /// Continue after the last completed frame of an earlier run.
        #[arg(long)]
        resume: bool,
    },
    /// Compare a reconstruction directory with a ground-truth dataset.
    Evaluate {
        /// Dataset written by `simulate`.
        gt_dir: PathBuf,
        /// Reconstruction output directory.
        rec_dir: PathBuf,
        /// Parameter file (default: <gt_dir>/params.toml).
        #[arg(long)]
        params: Option<PathBuf>,
        /// Voxel grid lower corner `x,y,z` (with --grid-max and --grid-resolution).
        #[arg(long, value_parser = parse_vec3, requires_all = ["grid_max", "grid_resolution"])]
        grid_min: Option<Vec3>,
        /// Voxel grid upper corner `x,y,z`.
        #[arg(long, value_parser = parse_vec3, requires_all = ["grid_min", "grid_resolution"])]
        grid_max: Option<Vec3>,
        /// Voxel edge length, meters.
        #[arg(long, requires_all = ["grid_min", "grid_max"])]
        grid_resolution: Option<f64>,
        /// Also write the metrics table to this file.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Write an oriented surface point cloud (PLY) for one particle file.
    ExportSurface {
        /// Particle file.
        particles: PathBuf,
        /// Output PLY file.
        out: PathBuf,
        /// Parameter file.
        #[arg(long, conflicts_with = "h")]
        params: Option<PathBuf>,
        /// Interaction radius, used with default parameters when no file is given.
        #[arg(long)]
        h: Option<f64>,
        /// Sampling lattice spacing, meters (default: h/4).
        #[arg(long)]
        spacing: Option<f64>,
    },
}

fn parse_vec3(s: &str) -> std::result::Result<Vec3, String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("`{p}`: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    match parts.as_slice() {
        [x, y, z] => Ok(Vec3::new(*x, *y, *z)),
        _ => Err("expected three comma-separated numbers".into()),
    }
}

fn cmd_simulate(scenario: &Path, out: &Path) -> Result<()> {
    let spec = ScenarioSpec::load(scenario)?;
    if spec.frames == 0 {
        log::warn!(
            "scenario `{}` requests zero frames; nothing to simulate",
            spec.name
        );
        eprintln!("warning: scenario requests zero frames; output directory left empty");
        fs::create_dir_all(out).map_err(|e| Error::Io {
            path: out.to_path_buf(),
            source: e,
        })?;
        return Ok(());
    }
    let output = simulate(&spec)?;
    pipeline::write_simulation(&output, out)?;
    let last = output.states.last().map(|s| s.len()).unwrap_or(0);
    println!(
        "simulated {} frames, {last} particles in the last frame",
        output.states.len()
    );
    Ok(())
}

fn cmd_reconstruct(config: &Path, resume: bool) -> Result<()> {
    let cfg = RunConfig::load(config)?;
    let summary = pipeline::run_reconstruction(&cfg, resume, |_, _| {})?;
    println!(
        "reconstructed frames {}..{} into {}, {} particles in the last frame",
        summary.first_frame,
        summary.frames_total,
        cfg.output_dir.display(),
        summary.final_count
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_evaluate(
    gt_dir: &Path,
    rec_dir: &Path,
    params: Option<PathBuf>,
    grid_min: Option<Vec3>,
    grid_max: Option<Vec3>,
    grid_resolution: Option<f64>,
    output: Option<PathBuf>,
) -> Result<()> {
    let params = pipeline::read_params(&params.unwrap_or_else(|| gt_dir.join(PARAMS_FILE)))?;
    let grid = match (grid_min, grid_max, grid_resolution) {
        (Some(lo), Some(hi), Some(res)) => Some(GridSpec::covering(lo, hi, res)?),
        _ => None,
    };
    let metrics = pipeline::evaluate_dirs(gt_dir, rec_dir, &params, grid)?;
    let mut table = format!("{METRICS_HEADER}\n");
    for m in &metrics {
        table.push_str(&m.csv_row());
        table.push('\n');
    }
    print!("{table}");
    if let Some(path) = output {
        fs::write(&path, &table).map_err(|e| Error::Io { path, source: e })?;
    }
    if !metrics.is_empty() {
        let mean = metrics.iter().map(|m| m.iou3d).sum::<f64>() / metrics.len() as f64;
        eprintln!("mean iou3d over {} frames: {mean:.4}", metrics.len());
    }
    Ok(())
}

fn cmd_export_surface(
    particles: &Path,
    out: &Path,
    params: Option<PathBuf>,
    h: Option<f64>,
    spacing: Option<f64>,
) -> Result<()> {
    let params = match (params, h) {
        (Some(p), _) => pipeline::read_params(&p)?,
        (None, Some(h)) => HyperParams::for_radius(h)?,
        (None, None) => {
            return Err(Error::Config {
                context: "export-surface".into(),
                reason: "pass --params or --h".into(),
            })
        }
    };
    let cloud = pipeline::export_surface(particles, &params, spacing)?;
    fluidrecon::io::write_ply(out, &cloud)?;
    println!(
        "wrote {} surface points to {}",
        cloud.points.len(),
        out.display()
    );
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { scenario, out } => cmd_simulate(&scenario, &out),
        Command::Reconstruct { config, resume } => cmd_reconstruct(&config, resume),
        Command::Evaluate {
            gt_dir,
            rec_dir,
            params,
            grid_min,
            grid_max,
            grid_resolution,
            output,
        } => cmd_evaluate(
            &gt_dir,
            &rec_dir,
            params,
            grid_min,
            grid_max,
            grid_resolution,
            output,
        ),
        Command::ExportSurface {
            particles,
            out,
            params,
            h,
            spacing,
        } => cmd_export_surface(&particles, &out, params, h, spacing),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("FLUIDRECON_LOG", "warn"))
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::from(1);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

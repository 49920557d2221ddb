//! Directory-level drivers: dataset layout, resumable reconstruction runs,
//! evaluation of particle sequences and surface export.
//!
//! Dataset layout (written by [`write_simulation`]):
//!
//! ```text
//! cameras.txt
//! scene.sdf
//! params.toml
//! masks/<camera>/frame_000000.pgm
//! particles/frame_000000.txt
//! ```
//!
//! A reconstruction output directory holds `particles/`, `diagnostics.csv`
//! and `checkpoint.toml`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::collision::GridSpec;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::image::BinaryMask;
use crate::io::{self, frame_stem, NamedCamera};
use crate::params::HyperParams;
use crate::reconstruct::{FrameDiagnostics, Reconstructor, CSV_HEADER};
use crate::sim::{default_eval_grid, evaluate, FrameMetrics, SimOutput};
use crate::source::SourceState;
use crate::state::ParticleState;
use crate::surface::{surface_points, SurfaceCloud};

pub const CAMERAS_FILE: &str = "cameras.txt";
pub const SDF_FILE: &str = "scene.sdf";
pub const PARAMS_FILE: &str = "params.toml";
pub const MASKS_DIR: &str = "masks";
pub const PARTICLES_DIR: &str = "particles";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.toml";

pub fn mask_path(masks_dir: &Path, camera: &str, frame: usize) -> PathBuf {
    masks_dir
        .join(camera)
        .join(format!("{}.pgm", frame_stem(frame)))
}

pub fn particles_path(dir: &Path, frame: usize) -> PathBuf {
    dir.join(PARTICLES_DIR)
        .join(format!("{}.txt", frame_stem(frame)))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_params(path: &Path, params: &HyperParams) -> Result<()> {
    let text = toml::to_string(params).map_err(|e| Error::config("parameters", e.to_string()))?;
    write_text(path, &text)
}

pub fn read_params(path: &Path) -> Result<HyperParams> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let params: HyperParams = toml::from_str(&text)
        .map_err(|e| Error::config(path.display().to_string(), e.message().to_string()))?;
    params.validate()?;
    Ok(params)
}

/// Writes a simulated dataset.
pub fn write_simulation(out: &SimOutput, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    io::write_cameras(&dir.join(CAMERAS_FILE), &out.cameras)?;
    io::write_sdf(&dir.join(SDF_FILE), &out.sdf)?;
    write_params(&dir.join(PARAMS_FILE), &out.params)?;
    let masks_dir = dir.join(MASKS_DIR);
    for (t, (state, masks)) in out.states.iter().zip(&out.masks).enumerate() {
        io::write_particles(&particles_path(dir, t), state)?;
        for (cam, mask) in out.cameras.iter().zip(masks) {
            io::write_mask(&mask_path(&masks_dir, &cam.name, t), mask)?;
        }
    }
    Ok(())
}

/// Number of consecutive frames `0, 1, ...` for which `exists` holds.
fn count_frames(exists: impl Fn(usize) -> bool) -> usize {
    let mut n = 0;
    while exists(n) {
        n += 1;
    }
    n
}

/// All consecutive particle files of a directory, from frame 0.
pub fn read_particle_sequence(dir: &Path) -> Result<Vec<ParticleState>> {
    let sub = dir.join(PARTICLES_DIR);
    if !sub.is_dir() {
        return Err(Error::NotFound(sub));
    }
    let n = count_frames(|t| particles_path(dir, t).is_file());
    (0..n)
        .map(|t| io::read_particles(&particles_path(dir, t)))
        .collect()
}

/// `masks[t][c]` for `frames` frames, or every frame present for all cameras.
pub fn read_mask_sequence(
    masks_dir: &Path,
    cameras: &[NamedCamera],
    frames: Option<usize>,
) -> Result<Vec<Vec<BinaryMask>>> {
    let present = count_frames(|t| {
        cameras
            .iter()
            .all(|c| mask_path(masks_dir, &c.name, t).is_file())
    });
    let n = match frames {
        Some(n) if n > present => {
            let missing = cameras
                .iter()
                .map(|c| mask_path(masks_dir, &c.name, present))
                .find(|p| !p.is_file())
                .unwrap_or_else(|| masks_dir.to_path_buf());
            return Err(Error::NotFound(missing));
        }
        Some(n) => n,
        None => present,
    };
    (0..n)
        .map(|t| {
            cameras
                .iter()
                .map(|c| {
                    let mask = io::read_mask(&mask_path(masks_dir, &c.name, t))?;
                    if (mask.width(), mask.height()) != (c.camera.width, c.camera.height) {
                        return Err(Error::DimensionMismatch(format!(
                            "mask of camera `{}` frame {t} is {}x{}, camera is {}x{}",
                            c.name,
                            mask.width(),
                            mask.height(),
                            c.camera.width,
                            c.camera.height
                        )));
                    }
                    Ok(mask)
                })
                .collect()
        })
        .collect()
}

/// Progress marker of a reconstruction run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    /// First frame not yet written.
    pub next_frame: usize,
    pub source: Option<SourceState>,
}

impl Checkpoint {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text)
            .map_err(|e| Error::parse(path.display().to_string(), e.message().to_string()))
    }

    /// Written to a temporary file first, then renamed.
    pub fn write(&self, path: &Path) -> Result<()> {
        let text = toml::to_string(self).map_err(|e| Error::config("checkpoint", e.to_string()))?;
        let tmp = path.with_extension("toml.tmp");
        write_text(&tmp, &text)?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunSummary {
    pub frames_total: usize,
    /// First frame processed by this invocation.
    pub first_frame: usize,
    pub final_count: usize,
}

/// Diagnostics rows of frames before `next_frame` (header included).
fn retained_diagnostics(path: &Path, next_frame: usize) -> Result<String> {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(out),
        Err(e) => return Err(Error::io(path, e)),
    };
    for line in text.lines().skip(1) {
        let frame: usize = line
            .split(',')
            .next()
            .and_then(|f| f.parse().ok())
            .ok_or_else(|| Error::parse(path.display().to_string(), format!("bad row `{line}`")))?;
        if frame < next_frame {
            out.push_str(line);
            out.push('\n');
        }
    }
    Ok(out)
}

/// Runs (or with `resume`, continues) the reconstruction described by `cfg`.
/// `on_frame` observes each finished frame.
pub fn run_reconstruction(
    cfg: &RunConfig,
    resume: bool,
    mut on_frame: impl FnMut(&ParticleState, &FrameDiagnostics),
) -> Result<RunSummary> {
    let cameras = io::read_cameras(&cfg.cameras)?;
    let options = cfg.sequence_options(&cameras)?;
    let sdf = io::read_sdf(&cfg.sdf)?;
    let masks = read_mask_sequence(&cfg.masks_dir, &cameras, cfg.frames)?;
    if masks.is_empty() {
        return Err(Error::NotFound(
            cameras
                .first()
                .map(|c| mask_path(&cfg.masks_dir, &c.name, 0))
                .unwrap_or_else(|| cfg.masks_dir.clone()),
        ));
    }
    let out = &cfg.output_dir;
    let checkpoint_path = out.join(CHECKPOINT_FILE);
    let diagnostics_path = out.join(DIAGNOSTICS_FILE);

    let mut rec = Reconstructor::new(
        cfg.params.clone(),
        cameras.iter().map(|c| c.camera.clone()).collect(),
        sdf,
        options,
    )?;
    let mut start = 0;
    if resume && checkpoint_path.is_file() {
        let cp = Checkpoint::read(&checkpoint_path)?;
        if cp.next_frame > masks.len() {
            return Err(Error::DimensionMismatch(format!(
                "checkpoint is at frame {} but only {} frames are configured",
                cp.next_frame,
                masks.len()
            )));
        }
        if cp.next_frame > 0 {
            rec.state = io::read_particles(&particles_path(out, cp.next_frame - 1))?;
        }
        rec.source = cp.source;
        rec.next_frame = cp.next_frame;
        start = cp.next_frame;
        log::info!("resuming at frame {start}");
    }
    let mut diagnostics = retained_diagnostics(&diagnostics_path, start)?;
    write_text(&diagnostics_path, &diagnostics)?;

    for frame_masks in masks.iter().skip(start) {
        let frame = rec.next_frame;
        let (state, diag) = rec.step(frame_masks.clone())?;
        io::write_particles(&particles_path(out, frame), &state)?;
        diagnostics.push_str(&diag.csv_rows());
        write_text(&diagnostics_path, &diagnostics)?;
        Checkpoint {
            next_frame: frame + 1,
            source: rec.source.clone(),
        }
        .write(&checkpoint_path)?;
        on_frame(&state, &diag);
    }
    Ok(RunSummary {
        frames_total: masks.len(),
        first_frame: start,
        final_count: rec.state.len(),
    })
}

/// Metrics of a reconstruction directory against a ground-truth dataset.
/// Silhouette IoU is included when the ground truth has cameras and masks.
pub fn evaluate_dirs(
    gt_dir: &Path,
    rec_dir: &Path,
    params: &HyperParams,
    grid: Option<GridSpec>,
) -> Result<Vec<FrameMetrics>> {
    let gt = read_particle_sequence(gt_dir)?;
    let rec = read_particle_sequence(rec_dir)?;
    if gt.len() != rec.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} ground-truth frames vs {} reconstructed frames",
            gt.len(),
            rec.len()
        )));
    }
    let grid = match grid {
        Some(g) => g,
        None => match default_eval_grid(&gt, &rec, params)? {
            Some(g) => g,
            None => GridSpec::covering(
                crate::state::Vec3::repeat(-params.h),
                crate::state::Vec3::repeat(params.h),
                0.5 * params.h,
            )?,
        },
    };
    let cameras_path = gt_dir.join(CAMERAS_FILE);
    let views = if cameras_path.is_file() && gt_dir.join(MASKS_DIR).is_dir() {
        let cams = io::read_cameras(&cameras_path)?;
        let masks = read_mask_sequence(&gt_dir.join(MASKS_DIR), &cams, Some(gt.len()))?;
        Some((cams, masks))
    } else {
        None
    };
    let plain: Option<Vec<_>> = views
        .as_ref()
        .map(|(c, _)| c.iter().map(|c| c.camera.clone()).collect());
    let view_refs = match (&plain, &views) {
        (Some(c), Some((_, m))) => Some((c.as_slice(), m.as_slice())),
        _ => None,
    };
    evaluate(&gt, &rec, &grid, params, view_refs)
}

/// Oriented surface samples of one particle file, on a lattice of `spacing`
/// (default `h / 4`).
pub fn export_surface(
    particles: &Path,
    params: &HyperParams,
    spacing: Option<f64>,
) -> Result<SurfaceCloud> {
    let state = io::read_particles(particles)?;
    surface_points(&state.positions, params, spacing.unwrap_or(0.25 * params.h))
}

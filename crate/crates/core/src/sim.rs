//! Synthetic ground truth: a forward position-based-fluids simulation that
//! reuses the collision and density solvers, rendered to binary masks, plus
//! metrics comparing a reconstruction against it.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::camera::PinholeCamera;
use crate::collision::{self, build_sdf_from_scene, GridSpec, SceneNode, VoxelSdf};
use crate::density::{self, density_constraint, hcp_ball, mean_abs};
use crate::dynamics::{predict, update_velocities_with};
use crate::error::{Error, Result};
use crate::image::BinaryMask;
use crate::io::NamedCamera;
use crate::params::HyperParams;
use crate::render::{multi_view_loss, render_mask, View};
use crate::state::{ParticleState, Vec3};
use crate::surface::{default_occupancy_threshold, iou_3d, voxelize};

fn default_up() -> Vec3 {
    Vec3::z()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraSpec {
    pub name: String,
    pub eye: Vec3,
    pub target: Vec3,
    #[serde(default = "default_up")]
    pub up: Vec3,
    /// Focal length in pixels.
    pub focal: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraSpec {
    pub fn build(&self) -> Result<PinholeCamera> {
        PinholeCamera::look_at(
            self.eye,
            self.target,
            self.up,
            self.focal,
            self.width,
            self.height,
        )
    }
}

/// Axis-aligned region.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Region {
    pub min: Vec3,
    pub max: Vec3,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridBox {
    pub min: Vec3,
    pub max: Vec3,
    pub resolution: f64,
}

/// Emits `rate` particles per frame (fractions accumulate) for frames in
/// `[start_frame, end_frame)`, in a compact cluster around `position`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Emitter {
    pub position: Vec3,
    #[serde(default)]
    pub velocity: Vec3,
    pub rate: f64,
    #[serde(default)]
    pub start_frame: usize,
    pub end_frame: usize,
}

/// Forward-simulation controls. Unset values fall back to the parameter set.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSettings {
    /// Substeps per frame.
    pub substeps: Option<usize>,
    /// Constraint passes per substep.
    pub iterations: Option<usize>,
    pub damping: Option<f64>,
    pub viscosity: Option<f64>,
    /// Frames simulated before frame 0 is recorded (lets initial blocks settle).
    pub settle_frames: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub name: String,
    pub frames: usize,
    #[serde(default)]
    pub seed: u64,
    /// Interaction radius shared by simulation and reconstruction.
    pub h: f64,
    /// Overrides of individual parameters (see `HyperParams`).
    #[serde(default)]
    pub params: toml::Table,
    #[serde(default)]
    pub sim: SimSettings,
    pub grid: GridBox,
    pub scene: Vec<SceneNode>,
    /// Regions filled with particles at the resting distance at start.
    #[serde(default)]
    pub blocks: Vec<Region>,
    #[serde(default)]
    pub emitters: Vec<Emitter>,
    pub cameras: Vec<CameraSpec>,
}

impl ScenarioSpec {
    pub fn from_toml(text: &str, ctx: &str) -> Result<Self> {
        let spec: Self = toml::from_str(text).map_err(|e| Error::config(ctx, e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, &path.display().to_string())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::config(&self.name, e.to_string()))
    }

    pub fn hyper_params(&self) -> Result<HyperParams> {
        let mut p = HyperParams::with_overrides(self.h, &self.params)?;
        p.seed = self.seed;
        Ok(p)
    }

    pub fn grid_spec(&self) -> Result<GridSpec> {
        GridSpec::covering(self.grid.min, self.grid.max, self.grid.resolution)
    }

    pub fn inside_grid(&self, p: &Vec3) -> bool {
        (0..3).all(|a| p[a] >= self.grid.min[a] && p[a] <= self.grid.max[a])
    }

    pub fn validate(&self) -> Result<()> {
        self.hyper_params()?;
        self.grid_spec()?;
        if self.scene.is_empty() {
            return Err(Error::config(&self.name, "scene has no primitives"));
        }
        if self.cameras.is_empty() {
            return Err(Error::config(&self.name, "at least one camera is required"));
        }
        for (i, e) in self.emitters.iter().enumerate() {
            if !(e.rate >= 0.0 && e.rate.is_finite()) {
                return Err(Error::config(
                    &self.name,
                    format!("emitter {i}: rate must be >= 0"),
                ));
            }
            if !self.inside_grid(&e.position) {
                return Err(Error::config(
                    &self.name,
                    format!("emitter {i} lies outside the grid"),
                ));
            }
        }
        for c in &self.cameras {
            c.build()
                .map_err(|e| Error::config(&self.name, format!("camera `{}`: {e}", c.name)))?;
        }
        Ok(())
    }

    pub fn named_cameras(&self) -> Result<Vec<NamedCamera>> {
        self.cameras
            .iter()
            .map(|c| {
                Ok(NamedCamera {
                    name: c.name.clone(),
                    camera: c.build()?,
                })
            })
            .collect()
    }

    pub fn build_sdf(&self) -> Result<VoxelSdf> {
        build_sdf_from_scene(&self.scene, &self.grid_spec()?)
    }
}

#[derive(Clone, Debug)]
pub struct SimOutput {
    pub params: HyperParams,
    pub cameras: Vec<NamedCamera>,
    pub sdf: VoxelSdf,
    pub states: Vec<ParticleState>,
    /// `masks[t][c]`: frame `t`, camera `c`.
    pub masks: Vec<Vec<BinaryMask>>,
}

/// Particle positions filling a region on a close-packed lattice.
pub fn fill_region(region: &Region, spacing: f64) -> Vec<Vec3> {
    let center = (region.min + region.max) * 0.5;
    let half = (region.max - region.min) * 0.5;
    let extent = half.norm() * 2.0;
    let volume = (extent / spacing).powi(3) as usize * 2 + 8;
    hcp_ball(spacing, volume)
        .into_iter()
        .map(|p| p + center)
        .filter(|p| (0..3).all(|a| p[a] >= region.min[a] && p[a] <= region.max[a]))
        .collect()
}

struct SimRun<'a> {
    spec: &'a ScenarioSpec,
    params: HyperParams,
    sdf: VoxelSdf,
    state: ParticleState,
    carry: Vec<f64>,
    rng: ChaCha8Rng,
    substeps: usize,
    iterations: usize,
    damping: f64,
    viscosity: f64,
}

impl SimRun<'_> {
    fn emit(&mut self, frame: usize) {
        let spacing = self.params.resting_distance();
        for (k, e) in self.spec.emitters.iter().enumerate() {
            if frame < e.start_frame || frame >= e.end_frame {
                continue;
            }
            self.carry[k] += e.rate;
            let count = self.carry[k].floor() as usize;
            self.carry[k] -= count as f64;
            for offset in hcp_ball(spacing, count) {
                let jitter = Vec3::new(
                    self.rng.random_range(-1.0..1.0),
                    self.rng.random_range(-1.0..1.0),
                    self.rng.random_range(-1.0..1.0),
                ) * (0.02 * self.params.h);
                let p = e.position + offset + jitter;
                self.state.positions.push(p);
                self.state.prev_positions.push(p);
                self.state.velocities.push(e.velocity);
            }
        }
    }

    fn advance(&mut self) -> Result<()> {
        let dt = self.params.dt / self.substeps as f64;
        for _ in 0..self.substeps {
            let mut next = predict(&self.state, &self.params.gravity, dt);
            for _ in 0..self.iterations {
                collision::apply_collision(&self.sdf, &mut next.positions);
                if !next.is_empty() {
                    density::apply_density(&mut next.positions, &self.params)?;
                }
            }
            collision::apply_collision(&self.sdf, &mut next.positions);
            update_velocities_with(&mut next, self.params.h, self.damping, self.viscosity, dt)?;
            self.state = next;
        }
        if let Some(i) = self.state.first_non_finite() {
            return Err(Error::Numeric(format!(
                "simulation particle {i} became non-finite"
            )));
        }
        Ok(())
    }

    fn frame(&mut self, frame: usize) -> Result<()> {
        self.emit(frame);
        if self.state.len() > self.params.particle_cap {
            return Err(Error::CapExceeded {
                cap: self.params.particle_cap,
            });
        }
        self.advance()
    }
}

/// Runs the scenario. Deterministic for a fixed seed.
pub fn simulate(spec: &ScenarioSpec) -> Result<SimOutput> {
    spec.validate()?;
    let params = spec.hyper_params()?;
    let cameras = spec.named_cameras()?;
    let sdf = spec.build_sdf()?;
    let mut initial = Vec::new();
    for b in &spec.blocks {
        initial.extend(fill_region(b, params.resting_distance()));
    }
    let s = &spec.sim;
    let mut run = SimRun {
        spec,
        substeps: s.substeps.unwrap_or(2).max(1),
        iterations: s.iterations.unwrap_or(params.n_collision).max(1),
        damping: s.damping.unwrap_or(params.lambda_d),
        viscosity: s.viscosity.unwrap_or(params.lambda_v),
        state: ParticleState::at_rest(initial),
        carry: vec![0.0; spec.emitters.len()],
        rng: ChaCha8Rng::seed_from_u64(spec.seed),
        sdf,
        params,
    };
    for _ in 0..s.settle_frames.unwrap_or(0) {
        run.advance()?;
    }
    let settings = run.params.render_settings();
    let mut states = Vec::with_capacity(spec.frames);
    let mut masks = Vec::with_capacity(spec.frames);
    for frame in 0..spec.frames {
        run.frame(frame)?;
        masks.push(
            cameras
                .iter()
                .map(|c| render_mask(&run.state.positions, &c.camera, &settings))
                .collect(),
        );
        states.push(run.state.clone());
    }
    Ok(SimOutput {
        params: run.params,
        cameras,
        sdf: run.sdf,
        states,
        masks,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameMetrics {
    pub frame: usize,
    pub iou3d: f64,
    /// Silhouette IoU of the reconstruction against the ground-truth masks.
    pub iou2d: Option<f64>,
    pub mean_abs_density: f64,
    pub n_gt: usize,
    pub n_rec: usize,
}

pub const METRICS_HEADER: &str = "frame,iou3d,iou2d,mean_abs_density,n_gt,n_rec";

impl FrameMetrics {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.frame,
            self.iou3d,
            self.iou2d.map(|v| v.to_string()).unwrap_or_default(),
            self.mean_abs_density,
            self.n_gt,
            self.n_rec
        )
    }
}

/// Grid covering every particle of both sequences plus a margin of `h`, at
/// resolution `h / 2`.
pub fn default_eval_grid(
    gt: &[ParticleState],
    rec: &[ParticleState],
    params: &HyperParams,
) -> Result<Option<GridSpec>> {
    let mut bounds: Option<(Vec3, Vec3)> = None;
    for s in gt.iter().chain(rec) {
        if let Some((lo, hi)) = s.bounds() {
            bounds = Some(match bounds {
                None => (lo, hi),
                Some((a, b)) => (a.inf(&lo), b.sup(&hi)),
            });
        }
    }
    let Some((lo, hi)) = bounds else {
        return Ok(None);
    };
    let pad = Vec3::repeat(params.h);
    GridSpec::covering(lo - pad, hi + pad, 0.5 * params.h).map(Some)
}

/// Per-frame 3D IoU (and silhouette IoU when cameras and masks are given).
pub fn evaluate(
    gt: &[ParticleState],
    rec: &[ParticleState],
    grid: &GridSpec,
    params: &HyperParams,
    views: Option<(&[PinholeCamera], &[Vec<BinaryMask>])>,
) -> Result<Vec<FrameMetrics>> {
    if gt.len() != rec.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} ground-truth frames vs {} reconstructed frames",
            gt.len(),
            rec.len()
        )));
    }
    if let Some((_, masks)) = views {
        if masks.len() != gt.len() {
            return Err(Error::DimensionMismatch(
                "mask sequence length differs".into(),
            ));
        }
    }
    let threshold = default_occupancy_threshold(params)?;
    let mut out = Vec::with_capacity(gt.len());
    for (t, (g, r)) in gt.iter().zip(rec).enumerate() {
        let a = voxelize(&g.positions, params, grid, threshold)?;
        let b = voxelize(&r.positions, params, grid, threshold)?;
        let iou2d = match views {
            Some((cams, masks)) => {
                let v: Vec<View> = cams
                    .iter()
                    .cloned()
                    .zip(masks[t].iter().cloned())
                    .map(|(camera, mask)| View { camera, mask })
                    .collect();
                Some(
                    multi_view_loss(&r.positions, &v, &params.render_settings(), params.eps_s)?.iou,
                )
            }
            None => None,
        };
        out.push(FrameMetrics {
            frame: t,
            iou3d: iou_3d(&a, &b)?,
            iou2d,
            mean_abs_density: mean_abs(&density_constraint(&r.positions, params)?),
            n_gt: g.len(),
            n_rec: r.len(),
        });
    }
    Ok(out)
}

//! Per-frame reconstruction loop and its sequence driver.
//!
//! Each frame: forward prediction, optional source insertion, then `n_outer`
//! rounds of [`n_joint` x (constraint passes, image-gradient steps)] each
//! followed by a branch check, and finally the velocity update.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::branching::{self, BranchAction};
use crate::camera::{triangulate_seed, PinholeCamera};
use crate::collision::{self, VoxelSdf};
use crate::density::{self, density_constraint, mean_abs};
use crate::dynamics::{predict, update_velocities};
use crate::error::{Error, Result};
use crate::image::BinaryMask;
use crate::params::HyperParams;
use crate::render::{multi_view_loss, LossReport, View};
use crate::source::{self, SourceState};
use crate::state::{ParticleState, Vec3};

/// Seed tetrahedron radius as a fraction of `h`.
pub const SEED_RADIUS: f64 = 0.3;

const STREAM_BRANCH: u64 = 0x6272_616e_6368;
const STREAM_SOURCE: u64 = 0x736f_7572_6365;

/// Deterministic per-(stream, frame, iteration) RNG seed.
fn stream_seed(seed: u64, stream: u64, frame: usize, iteration: usize) -> u64 {
    let mut x = seed ^ stream.rotate_left(17);
    for v in [frame as u64, iteration as u64] {
        x = x.wrapping_add(v).wrapping_add(0x9e37_79b9_7f4a_7c15);
        x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        x ^= x >> 31;
    }
    x
}

/// Metrics for one outer iteration, measured on a fresh render after its
/// inner loops and before its branch decision is applied.
#[derive(Clone, Debug, PartialEq)]
pub struct OuterRecord {
    pub frame: usize,
    pub outer: usize,
    pub smape: f64,
    pub iou: f64,
    pub mean_grad_norm: f64,
    pub mean_abs_density: f64,
    pub max_penetration: f64,
    pub n: usize,
    pub action: BranchAction,
    pub particle_index: Option<usize>,
    /// A removal was refused at the particle floor.
    pub downgraded: bool,
    /// A duplication was refused at the particle cap.
    pub cap_hit: bool,
    pub cg_fallbacks: usize,
    pub degenerate_collisions: usize,
    pub source: Option<(Vec3, f64)>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct FrameDiagnostics {
    pub frame: usize,
    pub records: Vec<OuterRecord>,
    /// Particles inserted by the source this frame.
    pub inserted: usize,
    /// Net change from branching this frame.
    pub delta_n: i64,
    pub wall_time: Duration,
}

pub const CSV_HEADER: &str = "frame,outer,smape,iou,mean_grad_norm,mean_abs_density,max_penetration,n,action,particle,downgraded,cap_hit,cg_fallbacks,degenerate_collisions,s_hat_x,s_hat_y,s_hat_z,f_hat";

impl OuterRecord {
    pub fn csv_row(&self) -> String {
        let mut row = format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.frame,
            self.outer,
            self.smape,
            self.iou,
            self.mean_grad_norm,
            self.mean_abs_density,
            self.max_penetration,
            self.n,
            self.action.as_str(),
            self.particle_index
                .map(|i| i.to_string())
                .unwrap_or_default(),
            self.downgraded as u8,
            self.cap_hit as u8,
            self.cg_fallbacks,
            self.degenerate_collisions,
        );
        match self.source {
            Some((s, f)) => {
                let _ = write!(row, ",{},{},{},{}", s.x, s.y, s.z, f);
            }
            None => row.push_str(",,,,"),
        }
        row
    }
}

impl FrameDiagnostics {
    pub fn csv_rows(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&r.csv_row());
            out.push('\n');
        }
        out
    }

    pub fn last(&self) -> Option<&OuterRecord> {
        self.records.last()
    }
}

fn loss(state: &ParticleState, views: &[View], params: &HyperParams) -> Result<LossReport> {
    multi_view_loss(
        &state.positions,
        views,
        &params.render_settings(),
        params.eps_s,
    )
}

/// Source particles inserted this frame, tracked through removals.
struct Tracked {
    indices: Vec<usize>,
    spawn: Vec<Vec3>,
}

impl Tracked {
    fn on_remove(&mut self, removed: usize) {
        let mut k = 0;
        while k < self.indices.len() {
            if self.indices[k] == removed {
                self.indices.remove(k);
                self.spawn.remove(k);
                continue;
            }
            if self.indices[k] > removed {
                self.indices[k] -= 1;
            }
            k += 1;
        }
    }
}

/// Reconstructs one frame starting from the previous frame's state.
pub fn reconstruct_frame(
    frame: usize,
    prev: &ParticleState,
    views: &[View],
    sdf: &VoxelSdf,
    params: &HyperParams,
    mut source: Option<&mut SourceState>,
) -> Result<(ParticleState, FrameDiagnostics)> {
    let started = Instant::now();
    if views.is_empty() {
        return Err(Error::param(
            "views",
            "at least one camera/mask pair is required",
        ));
    }
    let all_empty = views.iter().all(|v| v.mask.is_empty());
    let mut diag = FrameDiagnostics {
        frame,
        ..Default::default()
    };
    if prev.is_empty() && all_empty && source.is_none() {
        diag.wall_time = started.elapsed();
        return Ok((ParticleState::default(), diag));
    }

    let mut state = predict(prev, &params.gravity, params.dt);
    let mut tracked = None;
    if let Some(src) = source.as_deref_mut() {
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(params.seed, STREAM_SOURCE, frame, 0));
        let ins =
            source::insert_source_particles(&state, src, params.h, params.particle_cap, &mut rng);
        if ins.capped {
            log::warn!("frame {frame}: source insertion limited by the particle cap");
        }
        diag.inserted = ins.indices.len();
        tracked = Some(Tracked {
            spawn: ins
                .indices
                .iter()
                .map(|&i| ins.state.positions[i])
                .collect(),
            indices: ins.indices,
        });
        state = ins.state;
    }

    for outer in 0..params.n_outer {
        let mut cg_fallbacks = 0;
        let mut degenerate = 0;
        for _ in 0..params.n_joint {
            for _ in 0..params.n_collision {
                degenerate += collision::apply_collision(sdf, &mut state.positions);
                if !state.is_empty() {
                    let step = density::apply_density(&mut state.positions, params)?;
                    cg_fallbacks += step.jacobi_fallback as usize;
                }
            }
            for _ in 0..params.n_image {
                let report = loss(&state, views, params)?;
                for (p, g) in state.positions.iter_mut().zip(&report.grad) {
                    *p -= g * params.alpha_image;
                }
            }
        }
        if let Some(i) = state.first_non_finite() {
            log::error!(
                "frame {frame}, outer {outer}: particle {i} non-finite at {:?} (N = {})",
                state.positions[i],
                state.len()
            );
            return Err(Error::Numeric(format!(
                "non-finite position for particle {i} at outer iteration {outer}"
            )));
        }

        let report = loss(&state, views, params)?;
        let constraints = density_constraint(&state.positions, params)?;
        let mut record = OuterRecord {
            frame,
            outer,
            smape: report.smape,
            iou: report.iou,
            mean_grad_norm: report.mean_grad_norm,
            mean_abs_density: mean_abs(&constraints),
            max_penetration: collision::max_penetration(sdf, &state.positions),
            n: state.len(),
            action: BranchAction::None,
            particle_index: None,
            downgraded: false,
            cap_hit: false,
            cg_fallbacks,
            degenerate_collisions: degenerate,
            source: source.as_deref().map(|s| (s.s_hat, s.f_hat)),
        };

        if !state.is_empty() && branching::detect_local_minimum(&report, params) {
            let mut action = branching::choose_action(report.observed_area, report.rendered_area);
            if action == BranchAction::Duplicate && state.len() >= params.particle_cap {
                record.cap_hit = true;
                action = BranchAction::None;
            }
            let decision = branching::select_particle(&state.positions, params, action)?;
            let mut rng =
                ChaCha8Rng::seed_from_u64(stream_seed(params.seed, STREAM_BRANCH, frame, outer));
            state = branching::apply_decision(&state, &decision, params.h, &mut rng);
            match (decision.action, decision.particle_index) {
                (BranchAction::Duplicate, Some(_)) => diag.delta_n += 1,
                (BranchAction::Remove, Some(i)) => {
                    diag.delta_n -= 1;
                    if let Some(t) = tracked.as_mut() {
                        t.on_remove(i);
                    }
                }
                _ => {}
            }
            record.action = decision.action;
            record.particle_index = decision.particle_index;
            record.downgraded = decision.downgraded;
        }
        diag.records.push(record);
    }

    update_velocities(&mut state, params)?;
    if let (Some(src), Some(t)) = (source, tracked) {
        let after: Vec<Vec3> = t.indices.iter().map(|&i| state.positions[i]).collect();
        source::update_source_location(src, &t.spawn, &after)?;
        source::update_flow_rate(src, diag.delta_n);
    }
    diag.wall_time = started.elapsed();
    log::info!(
        "frame {frame}: N = {}, iou = {:.3}, {:.2?}",
        state.len(),
        diag.last().map(|r| r.iou).unwrap_or(1.0),
        diag.wall_time
    );
    Ok((state, diag))
}

/// Four particles on a regular tetrahedron of radius `0.3 h` around `center`.
pub fn seed_around(center: Vec3, h: f64) -> ParticleState {
    let r = SEED_RADIUS * h / 3f64.sqrt();
    let offsets = [
        Vec3::new(1.0, 1.0, 1.0),
        Vec3::new(1.0, -1.0, -1.0),
        Vec3::new(-1.0, 1.0, -1.0),
        Vec3::new(-1.0, -1.0, 1.0),
    ];
    ParticleState::at_rest(offsets.iter().map(|o| center + o * r).collect())
}

/// Stereo seed: triangulate the two mask centroids, then [`seed_around`].
pub fn seed_initial(
    left: &PinholeCamera,
    right: &PinholeCamera,
    mask_left: &BinaryMask,
    mask_right: &BinaryMask,
    params: &HyperParams,
) -> Result<ParticleState> {
    if mask_left.is_empty() || mask_right.is_empty() {
        return Err(Error::Geometry(
            "stereo seeding needs non-empty masks in both views; configure a manual seed point instead".into(),
        ));
    }
    let center = triangulate_seed(left, right, mask_left, mask_right)
        .map_err(|e| Error::Geometry(format!("{e}; configure a manual seed point instead")))?;
    Ok(seed_around(center, params.h))
}

/// How the first particles are placed once liquid is observed.
#[derive(Clone, Debug, PartialEq)]
pub enum SeedMode {
    /// Triangulate from two views, given by index.
    Stereo {
        left: usize,
        right: usize,
    },
    Manual(Vec3),
}

/// Which cameras contribute to the image loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossViews {
    /// One camera, by index.
    Single(usize),
    /// Unweighted mean over all cameras.
    All,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SequenceOptions {
    pub seed_mode: SeedMode,
    pub loss_views: LossViews,
    /// Enables source estimation; the source starts at the seed point.
    pub source: bool,
}

impl Default for SequenceOptions {
    fn default() -> Self {
        Self {
            seed_mode: SeedMode::Stereo { left: 0, right: 1 },
            loss_views: LossViews::Single(0),
            source: false,
        }
    }
}

/// Frame-by-frame driver holding the state carried between frames.
#[derive(Clone, Debug)]
pub struct Reconstructor {
    pub params: HyperParams,
    pub cameras: Vec<PinholeCamera>,
    pub sdf: VoxelSdf,
    pub options: SequenceOptions,
    pub state: ParticleState,
    pub source: Option<SourceState>,
    pub next_frame: usize,
}

impl Reconstructor {
    pub fn new(
        params: HyperParams,
        cameras: Vec<PinholeCamera>,
        sdf: VoxelSdf,
        options: SequenceOptions,
    ) -> Result<Self> {
        params.validate()?;
        if cameras.is_empty() {
            return Err(Error::param("cameras", "at least one camera is required"));
        }
        if let SeedMode::Stereo { left, right } = options.seed_mode {
            if left >= cameras.len() || right >= cameras.len() || left == right {
                return Err(Error::param(
                    "seed_mode",
                    "stereo seeding needs two distinct valid camera indices",
                ));
            }
        }
        if let LossViews::Single(i) = options.loss_views {
            if i >= cameras.len() {
                return Err(Error::param(
                    "loss_views",
                    format!("camera index {i} out of range"),
                ));
            }
        }
        Ok(Self {
            params,
            cameras,
            sdf,
            options,
            state: ParticleState::default(),
            source: None,
            next_frame: 0,
        })
    }

    /// Has the reconstruction been seeded (or the source started)?
    pub fn is_started(&self) -> bool {
        !self.state.is_empty() || self.source.is_some()
    }

    fn seed(&mut self, masks: &[BinaryMask]) -> Result<()> {
        let point = match &self.options.seed_mode {
            SeedMode::Manual(p) => *p,
            SeedMode::Stereo { left, right } => {
                let (l, r) = (*left, *right);
                let seeded = seed_initial(
                    &self.cameras[l],
                    &self.cameras[r],
                    &masks[l],
                    &masks[r],
                    &self.params,
                )?;
                seeded.positions.iter().sum::<Vec3>() / seeded.len() as f64
            }
        };
        self.state = seed_around(point, self.params.h);
        if self.options.source {
            self.source = Some(SourceState::new(point));
        }
        Ok(())
    }

    /// Processes the next frame. Before the first non-empty observation the
    /// reconstruction stays empty; seeding happens on that frame.
    pub fn step(&mut self, masks: Vec<BinaryMask>) -> Result<(ParticleState, FrameDiagnostics)> {
        let frame = self.next_frame;
        if masks.len() != self.cameras.len() {
            return Err(Error::DimensionMismatch(format!(
                "frame {frame}: {} masks for {} cameras",
                masks.len(),
                self.cameras.len()
            )));
        }
        let wrap = |e: Error| Error::Frame {
            frame,
            source: Box::new(e),
        };
        if !self.is_started() && masks.iter().any(|m| !m.is_empty()) {
            self.seed(&masks).map_err(wrap)?;
        }
        let mut views: Vec<View> = self
            .cameras
            .iter()
            .cloned()
            .zip(masks)
            .map(|(camera, mask)| View { camera, mask })
            .collect();
        if let LossViews::Single(i) = self.options.loss_views {
            views = vec![views.swap_remove(i)];
        }
        let (state, diag) = reconstruct_frame(
            frame,
            &self.state,
            &views,
            &self.sdf,
            &self.params,
            self.source.as_mut(),
        )
        .map_err(wrap)?;
        self.state = state;
        self.next_frame += 1;
        Ok((self.state.clone(), diag))
    }
}

/// Runs all frames; `frames[t][c]` is the mask of camera `c` at frame `t`.
pub fn reconstruct_sequence(
    frames: Vec<Vec<BinaryMask>>,
    cameras: Vec<PinholeCamera>,
    sdf: VoxelSdf,
    params: HyperParams,
    options: SequenceOptions,
) -> Result<(Vec<ParticleState>, Vec<FrameDiagnostics>)> {
    if frames.is_empty() {
        return Err(Error::param("frames", "at least one frame is required"));
    }
    let mut rec = Reconstructor::new(params, cameras, sdf, options)?;
    let mut states = Vec::with_capacity(frames.len());
    let mut diags = Vec::with_capacity(frames.len());
    for masks in frames {
        let (s, d) = rec.step(masks)?;
        states.push(s);
        diags.push(d);
    }
    Ok((states, diags))
}

/// Diagnostics of several frames as CSV text with header.
pub fn diagnostics_csv(diags: &[FrameDiagnostics]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for d in diags {
        out.push_str(&d.csv_rows());
    }
    out
}

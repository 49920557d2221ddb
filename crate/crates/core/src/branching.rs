//! Particle-count adjustment for the mixed-integer part of the reconstruction.
//!
//! When the image optimization stalls with a poor silhouette overlap, one
//! particle is duplicated (rendered area too small) or removed (otherwise).
//! The particle is the one whose duplication/removal leaves the density
//! constraints closest to zero in the l1 sense, evaluated with exact
//! incremental updates of the constraint vector.

use rand::Rng;

use crate::density::{compute_density, constraints_from_density};
use crate::error::Result;
use crate::kernels::SphKernels;
use crate::params::HyperParams;
use crate::render::LossReport;
use crate::state::{ParticleState, Vec3};

/// Removal is refused at or below this particle count.
pub const MIN_PARTICLES: usize = 4;
/// Clone offset radius as a fraction of `h`.
pub const CLONE_JITTER: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BranchAction {
    Duplicate,
    Remove,
    None,
}

impl BranchAction {
    pub fn as_str(&self) -> &'static str {
        match self {
            BranchAction::Duplicate => "duplicate",
            BranchAction::Remove => "remove",
            BranchAction::None => "none",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BranchDecision {
    pub action: BranchAction,
    pub particle_index: Option<usize>,
    /// l1 constraint loss for every candidate index.
    pub loss_table: Vec<f64>,
    /// A removal was requested at the particle floor and turned into `None`.
    pub downgraded: bool,
}

impl BranchDecision {
    pub fn none() -> Self {
        Self {
            action: BranchAction::None,
            particle_index: None,
            loss_table: Vec::new(),
            downgraded: false,
        }
    }
}

/// Mean gradient norm at or below `gamma_s` and IoU at or below `gamma_iou`.
pub fn detect_local_minimum(report: &LossReport, params: &HyperParams) -> bool {
    report.mean_grad_norm <= params.gamma_s && report.iou <= params.gamma_iou
}

/// Duplicate when the rendered area is smaller than the observed one.
pub fn choose_action(observed_area: usize, rendered_area: usize) -> BranchAction {
    if rendered_area < observed_area {
        BranchAction::Duplicate
    } else {
        BranchAction::Remove
    }
}

/// Constraints of all `N + 1` particles after cloning particle `i` in place.
/// The clone is appended last; its value equals the parent's.
pub fn incremental_constraints_add(
    positions: &[Vec3],
    constraints: &[f64],
    params: &HyperParams,
    i: usize,
) -> Vec<f64> {
    let k = SphKernels::new_unchecked(params.h);
    let pi = positions[i];
    let mut out: Vec<f64> = positions
        .iter()
        .zip(constraints)
        .map(|(pk, ck)| ck + k.poly6_r2((pk - pi).norm_squared()) / params.rho0)
        .collect();
    out.push(out[i]);
    out
}

/// Constraints of the remaining `N - 1` particles (original order) after
/// removing particle `i`.
pub fn incremental_constraints_remove(
    positions: &[Vec3],
    constraints: &[f64],
    params: &HyperParams,
    i: usize,
) -> Vec<f64> {
    let k = SphKernels::new_unchecked(params.h);
    let pi = positions[i];
    positions
        .iter()
        .zip(constraints)
        .enumerate()
        .filter(|(k_idx, _)| *k_idx != i)
        .map(|(_, (pk, ck))| ck - k.poly6_r2((pk - pi).norm_squared()) / params.rho0)
        .collect()
}

/// Evaluates the l1 objective for every candidate and returns the argmin
/// (lowest index on ties).
pub fn select_particle(
    positions: &[Vec3],
    params: &HyperParams,
    action: BranchAction,
) -> Result<BranchDecision> {
    let n = positions.len();
    match action {
        BranchAction::None => return Ok(BranchDecision::none()),
        BranchAction::Duplicate if n == 0 => return Ok(BranchDecision::none()),
        BranchAction::Remove if n <= MIN_PARTICLES => {
            return Ok(BranchDecision {
                downgraded: true,
                ..BranchDecision::none()
            })
        }
        _ => {}
    }
    let field = compute_density(positions, params.h);
    let c = constraints_from_density(&field.rho, params.rho0)?;
    let kern = SphKernels::new_unchecked(params.h);
    let inv_rho0 = 1.0 / params.rho0;
    let base: f64 = c.iter().map(|v| v.abs()).sum();
    let w0 = kern.poly6_r2(0.0) * inv_rho0;

    // Only neighbors within h change, so each candidate costs O(neighbors).
    let loss_table: Vec<f64> = (0..n)
        .map(|i| {
            let mut delta = 0.0;
            for &k in &field.neighbors[i] {
                let w = kern.poly6_r2((positions[k] - positions[i]).norm_squared()) * inv_rho0;
                let updated = match action {
                    BranchAction::Duplicate => c[k] + w,
                    _ => c[k] - w,
                };
                delta += updated.abs() - c[k].abs();
            }
            match action {
                BranchAction::Duplicate => base + delta - c[i].abs() + 2.0 * (c[i] + w0).abs(),
                _ => base + delta - c[i].abs(),
            }
        })
        .collect();

    let mut best = 0;
    for (i, &l) in loss_table.iter().enumerate() {
        if l < loss_table[best] {
            best = i;
        }
    }
    Ok(BranchDecision {
        action,
        particle_index: Some(best),
        loss_table,
        downgraded: false,
    })
}

/// Uniform sample in a ball.
pub(crate) fn jitter_in_ball<R: Rng>(rng: &mut R, radius: f64) -> Vec3 {
    loop {
        let v = Vec3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        if v.norm_squared() <= 1.0 {
            return v * radius;
        }
    }
}

/// Applies a decision: a clone is appended near its parent with no motion
/// history; a removal deletes the particle and keeps the others in order.
pub fn apply_decision<R: Rng>(
    state: &ParticleState,
    decision: &BranchDecision,
    h: f64,
    rng: &mut R,
) -> ParticleState {
    let mut next = state.clone();
    match (decision.action, decision.particle_index) {
        (BranchAction::Duplicate, Some(i)) => {
            let spawn = state.positions[i] + jitter_in_ball(rng, CLONE_JITTER * h);
            next.push_at_rest(spawn);
        }
        (BranchAction::Remove, Some(i)) => next.remove(i),
        _ => {}
    }
    next
}

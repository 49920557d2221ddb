//! Single static emitter estimation: particles are inserted at the estimated
//! location each frame, the location follows the optimizer's corrections of
//! the inserted particles, and the flow rate tracks net particle growth.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::branching::jitter_in_ball;
use crate::error::{Error, Result};
use crate::state::{ParticleState, Vec3};

/// Spawn jitter radius as a fraction of `h`.
pub const SOURCE_JITTER: f64 = 0.05;
pub const DEFAULT_ALPHA_F: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceState {
    pub s_hat: Vec3,
    pub f_hat: f64,
    /// Total number of particles inserted so far.
    pub cumulative_inserted: u64,
    pub alpha_f: f64,
    pub lambda_f: f64,
}

impl SourceState {
    /// Flow rate starts at one particle per frame, decay at half the rate.
    pub fn new(s_hat: Vec3) -> Self {
        Self {
            s_hat,
            f_hat: 1.0,
            cumulative_inserted: 0,
            alpha_f: DEFAULT_ALPHA_F,
            lambda_f: DEFAULT_ALPHA_F / 2.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.s_hat.iter().all(|v| v.is_finite()) {
            return Err(Error::param("source.s_hat", "must be finite"));
        }
        if !(self.f_hat.is_finite() && self.f_hat >= 0.0) {
            return Err(Error::param(
                "source.f_hat",
                "must be finite and non-negative",
            ));
        }
        if !(self.alpha_f.is_finite() && self.alpha_f >= 0.0) {
            return Err(Error::param(
                "source.alpha_f",
                "must be finite and non-negative",
            ));
        }
        if !(self.lambda_f.is_finite() && self.lambda_f >= 0.0) {
            return Err(Error::param(
                "source.lambda_f",
                "must be finite and non-negative",
            ));
        }
        Ok(())
    }

    /// Location step size: inverse of the cumulative insertion count.
    pub fn alpha_s(&self) -> f64 {
        if self.cumulative_inserted == 0 {
            0.0
        } else {
            1.0 / self.cumulative_inserted as f64
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Insertion {
    pub state: ParticleState,
    pub indices: Vec<usize>,
    /// Fewer particles than requested were inserted because of the cap.
    pub capped: bool,
}

/// Appends `round(f_hat)` particles near `s_hat`, at rest, and counts them.
pub fn insert_source_particles<R: Rng>(
    state: &ParticleState,
    src: &mut SourceState,
    h: f64,
    cap: usize,
    rng: &mut R,
) -> Insertion {
    let requested = src.f_hat.round().max(0.0) as usize;
    let room = cap.saturating_sub(state.len());
    let count = requested.min(room);
    let mut next = state.clone();
    let mut indices = Vec::with_capacity(count);
    for _ in 0..count {
        indices.push(next.len());
        next.push_at_rest(src.s_hat + jitter_in_ball(rng, SOURCE_JITTER * h));
    }
    src.cumulative_inserted += count as u64;
    Insertion {
        state: next,
        indices,
        capped: count < requested,
    }
}

/// Moves `s_hat` by the mean optimizer correction of this frame's inserted
/// particles, scaled by the cumulative step size.
pub fn update_source_location(
    src: &mut SourceState,
    before: &[Vec3],
    after: &[Vec3],
) -> Result<()> {
    if before.len() != after.len() {
        return Err(Error::DimensionMismatch(format!(
            "source positions: {} before, {} after",
            before.len(),
            after.len()
        )));
    }
    if before.is_empty() {
        return Ok(());
    }
    let sum: Vec3 = before.iter().zip(after).map(|(p, q)| q - p).sum();
    src.s_hat += sum * (src.alpha_s() / before.len() as f64);
    Ok(())
}

/// `f_hat <- max(0, alpha_f * delta_n + f_hat - lambda_f)`.
pub fn update_flow_rate(src: &mut SourceState, delta_n: i64) {
    src.f_hat = (src.alpha_f * delta_n as f64 + src.f_hat - src.lambda_f).max(0.0);
}

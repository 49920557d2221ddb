//! Frame-to-frame prediction: constraint-induced velocity with damping, XSPH
//! viscosity, and a ballistic forward step under gravity.

use rayon::prelude::*;

use crate::density::{compute_density, DensityField};
use crate::error::{Error, Result};
use crate::kernels::SphKernels;
use crate::params::HyperParams;
use crate::state::{ParticleState, Vec3};

/// `v_i = (1 - lambda_d) (p_i - p_prev_i) / dt`.
pub fn induce_velocity(state: &ParticleState, lambda_d: f64, dt: f64) -> Result<Vec<Vec3>> {
    if !(dt > 0.0) {
        return Err(Error::param("dt", format!("must be positive, got {dt}")));
    }
    let scale = (1.0 - lambda_d) / dt;
    Ok(state
        .positions
        .iter()
        .zip(&state.prev_positions)
        .map(|(p, q)| (p - q) * scale)
        .collect())
}

/// `v_i + lambda_v sum_j (v_j - v_i) / rho_j W(|p_i - p_j|)`.
pub fn apply_xsph(
    positions: &[Vec3],
    velocities: &[Vec3],
    field: &DensityField,
    h: f64,
    lambda_v: f64,
) -> Vec<Vec3> {
    if lambda_v == 0.0 {
        return velocities.to_vec();
    }
    let k = SphKernels::new_unchecked(h);
    (0..positions.len())
        .into_par_iter()
        .map(|i| {
            let vi = velocities[i];
            let mut acc = Vec3::zeros();
            for &j in &field.neighbors[i] {
                let w = k.poly6_r2((positions[i] - positions[j]).norm_squared());
                acc += (velocities[j] - vi) * (w / field.rho[j]);
            }
            vi + acc * lambda_v
        })
        .collect()
}

/// Replaces the state's velocities with damped, viscosity-smoothed induced
/// velocities evaluated at the current (optimized) positions.
pub fn update_velocities(state: &mut ParticleState, params: &HyperParams) -> Result<()> {
    update_velocities_with(state, params.h, params.lambda_d, params.lambda_v, params.dt)
}

pub(crate) fn update_velocities_with(
    state: &mut ParticleState,
    h: f64,
    lambda_d: f64,
    lambda_v: f64,
    dt: f64,
) -> Result<()> {
    let v = induce_velocity(state, lambda_d, dt)?;
    let field = compute_density(&state.positions, h);
    state.velocities = apply_xsph(&state.positions, &v, &field, h, lambda_v);
    Ok(())
}

/// Forward prediction `p + v dt + g dt^2 / 2`; the current positions become
/// the previous ones.
pub fn predict(state: &ParticleState, gravity: &Vec3, dt: f64) -> ParticleState {
    let drop = gravity * (0.5 * dt * dt);
    ParticleState {
        positions: state
            .positions
            .iter()
            .zip(&state.velocities)
            .map(|(p, v)| p + v * dt + drop)
            .collect(),
        prev_positions: state.positions.clone(),
        velocities: state.velocities.clone(),
    }
}

//! SPH density, the incompressibility constraint `C_i = rho_i / rho0 - 1`, and
//! its regularized Gauss-Newton projection.
//!
//! The projection solves `(J J^T + eps I) lambda = C` with conjugate gradients
//! (matrix free, using the kernel sparsity of `J`) and moves particles by
//! `-J^T lambda` plus an artificial pressure term against clustering.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kernels::SphKernels;
use crate::neighbors::neighbor_lists;
use crate::params::HyperParams;
use crate::state::Vec3;

/// Maximum conjugate-gradient iterations per density solve.
pub const CG_MAX_ITERATIONS: usize = 50;
/// Relative residual at which the CG solve stops.
pub const CG_RELATIVE_TOLERANCE: f64 = 1e-6;
/// Pairs closer than this fraction of `h` have no defined direction and are skipped.
pub const COINCIDENT_FRACTION: f64 = 1e-7;

#[derive(Clone, Debug, PartialEq)]
pub struct DensityField {
    pub rho: Vec<f64>,
    pub neighbors: Vec<Vec<usize>>,
}

/// `rho_i = sum_j W_poly6(|p_i - p_j|, h)`, self term included.
pub fn compute_density(positions: &[Vec3], h: f64) -> DensityField {
    let neighbors = neighbor_lists(positions, h);
    let rho = density_with_neighbors(positions, &neighbors, h);
    DensityField { rho, neighbors }
}

pub(crate) fn density_with_neighbors(
    positions: &[Vec3],
    neighbors: &[Vec<usize>],
    h: f64,
) -> Vec<f64> {
    let k = SphKernels::new_unchecked(h);
    let w0 = k.poly6_r2(0.0);
    positions
        .par_iter()
        .zip(neighbors.par_iter())
        .map(|(p, nbrs)| {
            w0 + nbrs
                .iter()
                .map(|&j| k.poly6_r2((p - positions[j]).norm_squared()))
                .sum::<f64>()
        })
        .collect()
}

pub fn constraints_from_density(rho: &[f64], rho0: f64) -> Result<Vec<f64>> {
    if !(rho0 > 0.0) {
        return Err(Error::param(
            "rho0",
            format!("resting density must be positive, got {rho0}"),
        ));
    }
    Ok(rho.iter().map(|r| r / rho0 - 1.0).collect())
}

pub fn density_constraint(positions: &[Vec3], params: &HyperParams) -> Result<Vec<f64>> {
    let field = compute_density(positions, params.h);
    constraints_from_density(&field.rho, params.rho0)
}

pub fn mean_abs(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().map(|v| v.abs()).sum::<f64>() / values.len() as f64
    }
}

/// One row of the constraint Jacobian: the block for the row's own particle
/// and the blocks for each neighbor.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct JacobianRow {
    pub diag: Vec3,
    pub off: Vec<(usize, Vec3)>,
}

/// Sparse N x 3N Jacobian of the density constraints.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConstraintJacobian {
    pub rows: Vec<JacobianRow>,
}

impl ConstraintJacobian {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// dC_i / dp_j as a 3-vector (zero outside the kernel support).
    pub fn entry(&self, i: usize, j: usize) -> Vec3 {
        let row = &self.rows[i];
        if i == j {
            return row.diag;
        }
        row.off
            .iter()
            .find(|(k, _)| *k == j)
            .map(|(_, v)| *v)
            .unwrap_or_else(Vec3::zeros)
    }

    /// `J x` for a displacement field `x`.
    pub fn apply(&self, x: &[Vec3]) -> Vec<f64> {
        self.rows
            .par_iter()
            .enumerate()
            .map(|(i, row)| {
                row.diag.dot(&x[i]) + row.off.iter().map(|(j, b)| b.dot(&x[*j])).sum::<f64>()
            })
            .collect()
    }

    /// `J^T y`.
    pub fn apply_transpose(&self, y: &[f64]) -> Vec<Vec3> {
        let mut out = vec![Vec3::zeros(); self.rows.len()];
        for (i, row) in self.rows.iter().enumerate() {
            out[i] += row.diag * y[i];
            for (j, b) in &row.off {
                out[*j] += b * y[i];
            }
        }
        out
    }

    /// Diagonal of `J J^T`.
    pub fn normal_diagonal(&self) -> Vec<f64> {
        self.rows
            .iter()
            .map(|row| {
                row.diag.norm_squared() + row.off.iter().map(|(_, b)| b.norm_squared()).sum::<f64>()
            })
            .collect()
    }
}

/// Spiky-gradient Jacobian:
/// `dC_i/dp_i = (1/rho0) sum_j u_ij W'(r_ij)` and `dC_i/dp_j = -(1/rho0) u_ij W'(r_ij)`
/// with `u_ij` the unit vector from `p_j` to `p_i`.
pub fn constraint_jacobian(
    positions: &[Vec3],
    neighbors: &[Vec<usize>],
    params: &HyperParams,
) -> ConstraintJacobian {
    let k = SphKernels::new_unchecked(params.h);
    let inv_rho0 = 1.0 / params.rho0;
    let min_r = COINCIDENT_FRACTION * params.h;
    let rows = positions
        .par_iter()
        .zip(neighbors.par_iter())
        .map(|(pi, nbrs)| {
            let mut row = JacobianRow {
                diag: Vec3::zeros(),
                off: Vec::with_capacity(nbrs.len()),
            };
            for &j in nbrs {
                let d = pi - positions[j];
                let r = d.norm();
                if r < min_r {
                    continue;
                }
                let g = d * (k.spiky_derivative(r) * inv_rho0 / r);
                row.diag += g;
                row.off.push((j, -g));
            }
            row
        })
        .collect();
    ConstraintJacobian { rows }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DensityStep {
    pub displacements: Vec<Vec3>,
    /// Constraint values before the step.
    pub constraints: Vec<f64>,
    pub lambda: Vec<f64>,
    pub cg_iterations: usize,
    /// The CG solve did not converge and a diagonal step was used instead.
    pub jacobi_fallback: bool,
}

/// Solves `(J J^T + eps I) x = b` by conjugate gradients.
/// Returns `(x, iterations, converged)`.
pub fn solve_normal_equations(
    jac: &ConstraintJacobian,
    eps: f64,
    b: &[f64],
    max_iterations: usize,
    tolerance: f64,
) -> (Vec<f64>, usize, bool) {
    let n = b.len();
    let mut x = vec![0.0; n];
    let b_norm = dot(b, b).sqrt();
    if b_norm == 0.0 {
        return (x, 0, true);
    }
    let apply = |v: &[f64]| -> Vec<f64> {
        let jtv = jac.apply_transpose(v);
        let mut out = jac.apply(&jtv);
        for (o, vi) in out.iter_mut().zip(v) {
            *o += eps * vi;
        }
        out
    };
    // Jacobi preconditioner: diagonal of J J^T + eps I.
    let inv_diag: Vec<f64> = jac
        .rows
        .iter()
        .map(|row| {
            let d = row.diag.norm_squared()
                + row.off.iter().map(|(_, v)| v.norm_squared()).sum::<f64>()
                + eps;
            if d > 0.0 {
                1.0 / d
            } else {
                1.0
            }
        })
        .collect();
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(a, d)| a * d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    for it in 0..max_iterations {
        let ap = apply(&p);
        let alpha = rz / dot(&p, &ap);
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        if dot(&r, &r).sqrt() <= tolerance * b_norm {
            return (x, it + 1, true);
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
        rz = rz_new;
    }
    (x, max_iterations, false)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Artificial pressure correction for every particle.
pub fn artificial_pressure(
    positions: &[Vec3],
    neighbors: &[Vec<usize>],
    params: &HyperParams,
) -> Vec<Vec3> {
    let k = SphKernels::new_unchecked(params.h);
    let w_ref = k.poly6(params.lambda_p);
    let inv_rho0 = 1.0 / params.rho0;
    let scale = -params.lambda_s * inv_rho0;
    let min_r = COINCIDENT_FRACTION * params.h;
    positions
        .par_iter()
        .zip(neighbors.par_iter())
        .map(|(pi, nbrs)| {
            let mut s = Vec3::zeros();
            for &j in nbrs {
                let d = pi - positions[j];
                let r = d.norm();
                if r < min_r {
                    continue;
                }
                let ratio = (k.poly6(r) / w_ref).powf(params.lambda_n);
                // Pair gradient term points toward p_j; the minus sign in
                // `scale` makes the correction repulsive.
                let pair = d * (k.spiky_derivative(r) * inv_rho0 / r);
                s += pair * (scale * ratio);
            }
            s
        })
        .collect()
}

/// Gauss-Newton density step plus artificial pressure.
pub fn solve_density(positions: &[Vec3], params: &HyperParams) -> Result<DensityStep> {
    if positions.is_empty() {
        return Ok(DensityStep::default());
    }
    let field = compute_density(positions, params.h);
    let constraints = constraints_from_density(&field.rho, params.rho0)?;
    let jac = constraint_jacobian(positions, &field.neighbors, params);
    let (mut lambda, iterations, converged) = solve_normal_equations(
        &jac,
        params.eps_rho,
        &constraints,
        CG_MAX_ITERATIONS,
        CG_RELATIVE_TOLERANCE,
    );
    if !converged {
        log::debug!("density CG did not converge in {iterations} iterations, using Jacobi step");
        let diag = jac.normal_diagonal();
        lambda = constraints
            .iter()
            .zip(&diag)
            .map(|(c, d)| c / (d + params.eps_rho))
            .collect();
    }
    let mut displacements = jac.apply_transpose(&lambda);
    let s_corr = artificial_pressure(positions, &field.neighbors, params);
    for (dp, s) in displacements.iter_mut().zip(&s_corr) {
        *dp = -*dp + s;
    }
    Ok(DensityStep {
        displacements,
        constraints,
        lambda,
        cg_iterations: iterations,
        jacobi_fallback: !converged,
    })
}

/// Applies one density projection in place.
pub fn apply_density(positions: &mut [Vec3], params: &HyperParams) -> Result<DensityStep> {
    let step = solve_density(positions, params)?;
    for (p, dp) in positions.iter_mut().zip(&step.displacements) {
        *p += dp;
    }
    Ok(step)
}

/// Hexagonal close packing around the origin (a lattice site), `count` sites
/// nearest the origin, with the given nearest-neighbor spacing.
pub fn hcp_ball(spacing: f64, count: usize) -> Vec<Vec3> {
    let layer = spacing * (2.0f64 / 3.0).sqrt();
    let reach =
        ((count as f64 * 0.75 / std::f64::consts::PI * 2f64.sqrt()).cbrt() + 3.0).ceil() as i64;
    let mut sites = Vec::new();
    for k in -reach..=reach {
        let shift = if k.rem_euclid(2) == 1 {
            Vec3::new(0.5 * spacing, spacing / (2.0 * 3f64.sqrt()), 0.0)
        } else {
            Vec3::zeros()
        };
        for j in -reach..=reach {
            for i in -reach..=reach {
                let p = Vec3::new(
                    (i as f64 + 0.5 * j as f64) * spacing,
                    j as f64 * spacing * 3f64.sqrt() / 2.0,
                    k as f64 * layer,
                ) + shift;
                sites.push(p);
            }
        }
    }
    // Stable sort keeps generation order among equidistant sites.
    sites.sort_by(|a, b| a.norm_squared().total_cmp(&b.norm_squared()));
    sites.truncate(count);
    sites
}

/// Number of particles packed into the calibration sphere.
pub const CALIBRATION_PARTICLES: usize = 1000;

/// Resting density: mean density of the interior particles (more than `h`
/// from the boundary) of ~1000 particles packed in a sphere at the resting
/// distance.
pub fn compute_resting_density(resting_distance: f64, h: f64) -> Result<f64> {
    if !(h > 0.0) {
        return Err(Error::param("h", "must be positive"));
    }
    if !(resting_distance > 0.0 && resting_distance < h) {
        return Err(Error::param(
            "resting_distance",
            format!("must lie in (0, h), got {resting_distance}"),
        ));
    }
    let ball = hcp_ball(resting_distance, CALIBRATION_PARTICLES);
    let radius = ball.last().map(|p| p.norm()).unwrap_or(0.0);
    let field = compute_density(&ball, h);
    let interior: Vec<f64> = ball
        .iter()
        .zip(&field.rho)
        .filter(|(p, _)| p.norm() <= radius - h)
        .map(|(_, r)| *r)
        .collect();
    if interior.len() < 10 {
        return Err(Error::param(
            "h",
            format!(
                "only {} interior particles in the calibration sphere; h too large for the resting distance",
                interior.len()
            ),
        ));
    }
    Ok(interior.iter().sum::<f64>() / interior.len() as f64)
}

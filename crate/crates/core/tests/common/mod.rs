//! Shared oracles and scenario runners for the integration tests.
#![allow(dead_code)]

use std::path::PathBuf;

use fluidrecon::branching::{
    incremental_constraints_add, incremental_constraints_remove, select_particle, BranchAction,
};
use fluidrecon::collision::{build_sdf_from_scene, max_penetration, solve_collision};
use fluidrecon::density::{apply_density, density_constraint, hcp_ball, mean_abs};
use fluidrecon::kernels::SphKernels;
use fluidrecon::reconstruct::{reconstruct_sequence, FrameDiagnostics, SequenceOptions};
use fluidrecon::render::{loss_gradient, render_mask};
use fluidrecon::sim::{simulate, ScenarioSpec, SimOutput};
use fluidrecon::{
    BinaryMask, GridSpec, HyperParams, ParticleState, PinholeCamera, RenderSettings, SceneNode,
    Vec3,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(format!("{name}.toml"))
}

pub fn load_scenario(name: &str) -> ScenarioSpec {
    ScenarioSpec::load(&scenario_path(name)).expect("shipped scenario loads")
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_in_box(rng: &mut ChaCha8Rng, lo: Vec3, hi: Vec3) -> Vec3 {
    Vec3::new(
        rng.random_range(lo.x..hi.x),
        rng.random_range(lo.y..hi.y),
        rng.random_range(lo.z..hi.z),
    )
}

/// Poly6 integrated over `[-h, h]^3` by jittered stratified sampling with
/// `strata^3` samples.
pub fn poly6_integral(h: f64, strata: usize, seed: u64) -> f64 {
    let k = SphKernels::new(h).unwrap();
    let mut rng = rng(seed);
    let cell = 2.0 * h / strata as f64;
    let mut sum = 0.0;
    for i in 0..strata {
        for j in 0..strata {
            let mut row = 0.0;
            for l in 0..strata {
                let p = Vec3::new(
                    -h + (i as f64 + rng.random::<f64>()) * cell,
                    -h + (j as f64 + rng.random::<f64>()) * cell,
                    -h + (l as f64 + rng.random::<f64>()) * cell,
                );
                row += k.poly6_r2(p.norm_squared());
            }
            sum += row;
        }
    }
    sum * cell * cell * cell
}

/// Largest relative error of the spiky derivative against central differences
/// on `samples` radii inside `(0.01 h, 0.99 h)`.
pub fn spiky_fd_error(h: f64, samples: usize) -> f64 {
    let k = SphKernels::new(h).unwrap();
    let step = 1e-6 * h;
    (0..samples)
        .map(|i| {
            let r = h * (0.01 + 0.98 * i as f64 / (samples - 1) as f64);
            let fd = (k.spiky(r + step) - k.spiky(r - step)) / (2.0 * step);
            let an = k.spiky_derivative(r);
            (fd - an).abs() / an.abs()
        })
        .fold(0.0, f64::max)
}

pub fn test_camera() -> PinholeCamera {
    PinholeCamera::look_at(
        Vec3::new(0.0, -1.0, 0.3),
        Vec3::zeros(),
        Vec3::z(),
        120.0,
        64,
        48,
    )
    .unwrap()
}

pub fn gradient_settings() -> RenderSettings {
    RenderSettings {
        sphere_radius: 0.04,
        softness: 1.0,
        threshold: 0.5,
    }
}

/// Random 5-particle scene and an observation rendered from a different
/// random 5-particle cloud.
pub fn gradient_scene(seed: u64) -> (Vec<Vec3>, BinaryMask) {
    let mut r = rng(seed);
    let lo = Vec3::repeat(-0.12);
    let hi = Vec3::repeat(0.12);
    let positions: Vec<Vec3> = (0..5).map(|_| random_in_box(&mut r, lo, hi)).collect();
    let target: Vec<Vec3> = (0..5).map(|_| random_in_box(&mut r, lo, hi)).collect();
    let mask = render_mask(&target, &test_camera(), &gradient_settings());
    (positions, mask)
}

/// `(analytic, finite difference)` for every coordinate of the scene.
pub fn gradient_pairs(seed: u64) -> Vec<(f64, f64)> {
    let cam = test_camera();
    let settings = gradient_settings();
    let eps_s = 1e-2;
    let (positions, mask) = gradient_scene(seed);
    let report = loss_gradient(&positions, &cam, &mask, &settings, eps_s).unwrap();
    let step = 1e-7;
    let mut out = Vec::new();
    for i in 0..positions.len() {
        for a in 0..3 {
            let mut plus = positions.clone();
            plus[i][a] += step;
            let mut minus = positions.clone();
            minus[i][a] -= step;
            let lp = loss_gradient(&plus, &cam, &mask, &settings, eps_s)
                .unwrap()
                .smape;
            let lm = loss_gradient(&minus, &cam, &mask, &settings, eps_s)
                .unwrap()
                .smape;
            out.push((report.grad[i][a], (lp - lm) / (2.0 * step)));
        }
    }
    out
}

/// `(checked, within 1e-2 relative)` over components with `|grad| > 1e-8`.
pub fn gradient_agreement(pairs: &[(f64, f64)]) -> (usize, usize) {
    let checked: Vec<_> = pairs.iter().filter(|(g, _)| g.abs() > 1e-8).collect();
    let good = checked
        .iter()
        .filter(|(g, fd)| (g - fd).abs() / g.abs() < 1e-2)
        .count();
    (checked.len(), good)
}

/// Worst penetration after `passes` collision passes for `count` particles
/// placed up to `depth` inside the solid part of `scene`.
pub fn collision_residual(
    scene: &[SceneNode],
    count: usize,
    depth: f64,
    passes: usize,
    seed: u64,
) -> (f64, f64) {
    let grid =
        GridSpec::covering(Vec3::new(-0.3, -0.3, -0.2), Vec3::new(0.3, 0.3, 0.3), 0.01).unwrap();
    let sdf = build_sdf_from_scene(scene, &grid).unwrap();
    let mut r = rng(seed);
    let mut positions = Vec::with_capacity(count);
    while positions.len() < count {
        let p = random_in_box(
            &mut r,
            Vec3::new(-0.25, -0.25, -0.15),
            Vec3::new(0.25, 0.25, 0.25),
        );
        let d = fluidrecon::collision::scene_distance(scene, &p);
        if d < 0.0 && d >= -depth {
            positions.push(p);
        }
    }
    let initial = max_penetration(&sdf, &positions);
    for _ in 0..passes {
        let step = solve_collision(&sdf, &positions);
        for (p, dp) in positions.iter_mut().zip(&step.displacements) {
            *p += dp;
        }
    }
    (initial, max_penetration(&sdf, &positions))
}

/// Mean `|C|` before and after each of `passes` density projections of a
/// 27-particle close-packed lattice compressed to `factor` of the resting
/// distance.
pub fn density_history(params: &HyperParams, factor: f64, passes: usize) -> Vec<f64> {
    let mut p = hcp_ball(factor * params.resting_distance(), 27);
    let mut hist = vec![mean_abs(&density_constraint(&p, params).unwrap())];
    for _ in 0..passes {
        apply_density(&mut p, params).unwrap();
        hist.push(mean_abs(&density_constraint(&p, params).unwrap()));
    }
    hist
}

/// Worst discrepancy between the incremental constraint updates (and the
/// selection objective) and recomputation from scratch.
pub fn branching_discrepancy(seed: u64) -> f64 {
    let params = HyperParams::for_radius(0.05).unwrap();
    let mut r = rng(seed);
    let positions: Vec<Vec3> = (0..30)
        .map(|_| random_in_box(&mut r, Vec3::zeros(), Vec3::repeat(0.1)))
        .collect();
    let c = density_constraint(&positions, &params).unwrap();
    let dup = select_particle(&positions, &params, BranchAction::Duplicate).unwrap();
    let rem = select_particle(&positions, &params, BranchAction::Remove).unwrap();
    let mut worst: f64 = 0.0;
    for i in 0..positions.len() {
        let mut added = positions.clone();
        added.push(positions[i]);
        let full_add = density_constraint(&added, &params).unwrap();
        let inc_add = incremental_constraints_add(&positions, &c, &params, i);
        let mut removed = positions.clone();
        removed.remove(i);
        let full_rem = density_constraint(&removed, &params).unwrap();
        let inc_rem = incremental_constraints_remove(&positions, &c, &params, i);
        for (a, b) in full_add
            .iter()
            .zip(&inc_add)
            .chain(full_rem.iter().zip(&inc_rem))
        {
            worst = worst.max((a - b).abs());
        }
        let l1_add: f64 = full_add.iter().map(|v| v.abs()).sum();
        let l1_rem: f64 = full_rem.iter().map(|v| v.abs()).sum();
        worst = worst.max((dup.loss_table[i] - l1_add).abs());
        worst = worst.max((rem.loss_table[i] - l1_rem).abs());
    }
    worst
}

pub struct ScenarioRun {
    pub sim: SimOutput,
    pub states: Vec<ParticleState>,
    pub diagnostics: Vec<FrameDiagnostics>,
}

/// Simulates a shipped scenario and reconstructs it from its masks.
pub fn run_scenario(name: &str, options: SequenceOptions) -> ScenarioRun {
    let spec = load_scenario(name);
    let sim = simulate(&spec).expect("simulation");
    let cameras = sim.cameras.iter().map(|c| c.camera.clone()).collect();
    let (states, diagnostics) = reconstruct_sequence(
        sim.masks.clone(),
        cameras,
        sim.sdf.clone(),
        sim.params.clone(),
        options,
    )
    .expect("reconstruction");
    ScenarioRun {
        sim,
        states,
        diagnostics,
    }
}

/// First field-wise difference between two diagnostics tables: numeric
/// fields within `rel` relative tolerance, the rest exactly.
pub fn compare_tables(a: &str, b: &str, rel: f64) -> Option<String> {
    let (la, lb): (Vec<&str>, Vec<&str>) = (a.lines().collect(), b.lines().collect());
    if la.len() != lb.len() {
        return Some(format!("{} vs {} rows", la.len(), lb.len()));
    }
    for (row, (ra, rb)) in la.iter().zip(&lb).enumerate() {
        let (fa, fb): (Vec<&str>, Vec<&str>) = (ra.split(',').collect(), rb.split(',').collect());
        if fa.len() != fb.len() {
            return Some(format!("row {row}: field count differs"));
        }
        for (col, (x, y)) in fa.iter().zip(&fb).enumerate() {
            let same = match (x.parse::<f64>(), y.parse::<f64>()) {
                (Ok(u), Ok(v)) => u == v || (u - v).abs() <= rel * u.abs().max(v.abs()),
                _ => x == y,
            };
            if !same {
                return Some(format!("row {row} column {col}: `{x}` vs `{y}`"));
            }
        }
    }
    None
}

mod common;

use common::*;
use fluidrecon::reconstruct::{reconstruct_frame, seed_initial};
use fluidrecon::render::render_mask;
use fluidrecon::sim::simulate;
use fluidrecon::{BinaryMask, HyperParams, PinholeCamera, SceneNode, Vec3, View};

#[test]
fn poly6_integrates_to_one_for_several_radii() {
    for (i, h) in [0.02, 0.05, 1.0].into_iter().enumerate() {
        let v = poly6_integral(h, 60, i as u64);
        assert!((v - 1.0).abs() < 1e-3, "h={h}: {v}");
    }
}

#[test]
fn spiky_derivative_against_differences() {
    for h in [0.03, 0.1, 2.0] {
        assert!(spiky_fd_error(h, 200) < 1e-4);
    }
}

#[test]
fn renderer_gradient_matches_differences() {
    for seed in 100..104 {
        let pairs = gradient_pairs(seed);
        let (checked, good) = gradient_agreement(&pairs);
        assert!(checked > 0);
        assert!(
            good as f64 >= 0.95 * checked as f64,
            "seed {seed}: {good}/{checked}"
        );
    }
}

#[test]
fn collision_resolves_floor_and_container() {
    let (before, after) = collision_residual(&[SceneNode::floor(0.0)], 200, 0.03, 5, 7);
    assert!(before > 0.02);
    assert!(after <= 1e-3);
    let walls = [SceneNode::open_box(
        Vec3::new(-0.1, -0.1, 0.0),
        Vec3::new(0.1, 0.1, 0.2),
        0.1,
    )];
    let (_, after) = collision_residual(&walls, 200, 0.03, 5, 8);
    assert!(after <= 1e-3);
}

#[test]
fn compressed_lattices_relax_below_threshold() {
    let params = HyperParams::for_radius(0.05).unwrap();
    for factor in [0.5, 0.55, 0.6, 0.65] {
        let hist = density_history(&params, factor, 10);
        assert!(hist[0] > 0.5, "factor {factor} starts at {}", hist[0]);
        assert!(
            hist.iter().take(5).skip(1).any(|&c| c < 0.05),
            "factor {factor}: {hist:?}"
        );
        // Decrease is strict until the residual is small.
        for w in hist.windows(2).filter(|w| w[0] > 0.01) {
            assert!(w[1] < w[0], "factor {factor}: {hist:?}");
        }
    }
}

#[test]
fn branching_updates_equal_recomputation() {
    for seed in 50..55 {
        assert!(branching_discrepancy(seed) <= 1e-10);
    }
}

fn stereo_pair() -> (PinholeCamera, PinholeCamera) {
    let target = Vec3::new(0.0, 0.0, 0.05);
    let l = PinholeCamera::look_at(Vec3::new(-0.4, -0.4, 0.2), target, Vec3::z(), 200.0, 96, 72)
        .unwrap();
    let r = PinholeCamera::look_at(Vec3::new(0.4, -0.4, 0.2), target, Vec3::z(), 200.0, 96, 72)
        .unwrap();
    (l, r)
}

#[test]
fn stereo_seed_lands_near_observed_point() {
    let params = HyperParams::for_radius(0.05).unwrap();
    let (l, r) = stereo_pair();
    let point = Vec3::new(0.02, -0.01, 0.06);
    let settings = params.render_settings();
    let ml = render_mask(&[point], &l, &settings);
    let mr = render_mask(&[point], &r, &settings);
    let seed = seed_initial(&l, &r, &ml, &mr, &params).unwrap();
    assert_eq!(seed.len(), 4);
    for p in &seed.positions {
        assert!(
            (p - point).norm() <= 0.3 * params.h + 0.1 * params.h,
            "{p:?}"
        );
    }
    let empty = BinaryMask::new(l.width, l.height);
    assert!(seed_initial(&l, &r, &empty, &mr, &params).is_err());
}

#[test]
fn ground_truth_is_nearly_a_fixed_point() {
    let spec = load_scenario("static_blob");
    let out = simulate(&fluidrecon::sim::ScenarioSpec { frames: 1, ..spec }).unwrap();
    let gt = &out.states[0];
    let views: Vec<View> = out
        .cameras
        .iter()
        .zip(&out.masks[0])
        .take(1)
        .map(|(c, m)| View {
            camera: c.camera.clone(),
            mask: m.clone(),
        })
        .collect();
    let (state, diag) = reconstruct_frame(0, gt, &views, &out.sdf, &out.params, None).unwrap();
    assert!(diag.last().unwrap().iou >= 0.95);
    assert_eq!(state.len(), gt.len());
    let rms = (gt
        .positions
        .iter()
        .zip(&state.positions)
        .map(|(a, b)| (a - b).norm_squared())
        .sum::<f64>()
        / gt.len() as f64)
        .sqrt();
    assert!(rms < 0.1 * out.params.h, "rms {rms}");
}

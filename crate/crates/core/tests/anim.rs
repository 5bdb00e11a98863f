use canonsplat::anim::{animate, Pose};
use canonsplat::gaussian::{rotation_from_quat, Camera, GaussianCloud};
use canonsplat::harness::{
    figure_skinning_grid, ground_truth_cloud, orbit_camera, psnr, skeleton, template_figure, FIGURE_BBOX,
};
use canonsplat::render::{render, RenderSettings};
use nalgebra::{Rotation3, Unit, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Surfels on the template, kept inside the grid box.
fn canonical(degree: usize) -> GaussianCloud {
    ground_truth_cloud(&template_figure(), 1500, 4)
        .unwrap()
        .with_sh_degree(degree)
        .unwrap()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn identity_pose_renders_match() {
    let cloud = canonical(1);
    let grid = figure_skinning_grid(24, 20).unwrap();
    let skel = skeleton();
    let cam = orbit_camera(64, 30.0, 10.0).unwrap();
    let settings = RenderSettings::default();
    let base = render(&cloud, &cam, &settings).unwrap();

    let posed = animate(&cloud, &grid, &skel, &Pose::identity(skel.len())).unwrap();
    let p = psnr(&render(&posed, &cam, &settings).unwrap().rgb, &base.rgb).unwrap();
    assert!(p > 50.0, "identity pose PSNR {p}");

    // A full turn of the root differs from the identity by rounding only, so
    // every Gaussian goes through covariance re-factoring.
    let mut turn = Pose::identity(skel.len());
    turn.set_axis_angle(0, [0.3, 1.0, -0.2], std::f64::consts::TAU);
    let posed = animate(&cloud, &grid, &skel, &turn).unwrap();
    assert_ne!(posed.rotations, cloud.rotations);
    let p = psnr(&render(&posed, &cam, &settings).unwrap().rgb, &base.rgb).unwrap();
    assert!(p > 50.0, "full-turn PSNR {p}");
}

#[test]
fn rigid_root_motion_is_equivariant() {
    // Degree 0: SH is not rotated under animation.
    let cloud = canonical(0);
    let grid = figure_skinning_grid(24, 20).unwrap();
    let skel = skeleton();
    let axis = Unit::new_normalize(Vector3::new(0.2, 1.0, 0.4));
    let angle = 0.9;
    let shift = Vector3::new(0.05, -0.03, 0.1);
    let mut pose = Pose::identity(skel.len());
    pose.set_axis_angle(0, axis.into_inner().into(), angle);
    pose.root_translation = shift.into();
    let posed = animate(&cloud, &grid, &skel, &pose).unwrap();

    // x' = R (x - c) + c + t about the root joint c.
    let r = Rotation3::from_axis_angle(&axis, angle).into_inner();
    let c = skel.rest_joint(0);
    for i in 0..cloud.len() {
        let want = r * (cloud.mean(i) - c) + c + shift;
        assert!((posed.mean(i) - want).norm() < 1e-12, "gaussian {i}");
    }

    let settings = RenderSettings::default();
    for (az, el) in [(0.0, 0.0), (120.0, 15.0), (250.0, -10.0)] {
        let cam = orbit_camera(64, az, el).unwrap();
        // The same camera, carried back into the canonical frame.
        let counter = Camera::new(
            cam.intrinsics(),
            cam.rotation * r,
            cam.rotation * (c - r * c + shift) + cam.translation,
            cam.near,
            cam.far,
        )
        .unwrap();
        let a = render(&posed, &cam, &settings).unwrap();
        let b = render(&cloud, &counter, &settings).unwrap();
        let d = max_abs_diff(&a.rgb.data, &b.rgb.data).max(max_abs_diff(&a.alpha.data, &b.alpha.data));
        assert!(d < 1e-4, "view ({az}, {el}): max channel difference {d}");
        assert!(a.alpha.data.iter().any(|&v| v > 0.5));
    }
}

#[test]
fn bending_an_arm_leaves_other_gaussians_untouched() {
    let cloud = canonical(1);
    let grid = figure_skinning_grid(24, 20).unwrap();
    let skel = skeleton();
    let arm = skel.bone_index("l_arm").unwrap();
    let mut pose = Pose::identity(skel.len());
    pose.set_axis_angle(arm, [0.0, 0.0, 1.0], 0.7);
    let posed = animate(&cloud, &grid, &skel, &pose).unwrap();

    let (mut still, mut moved) = (0, 0);
    for i in 0..cloud.len() {
        let w = grid.query_weights(&cloud.mean(i));
        if w[arm] == 0.0 {
            still += 1;
            assert_eq!(posed.get(i), cloud.get(i), "gaussian {i} has no arm weight but changed");
        } else if w[arm] > 0.5 {
            moved += 1;
            assert!((posed.mean(i) - cloud.mean(i)).norm() > 1e-3, "gaussian {i} is on the arm but stayed");
        }
    }
    assert!(still > 100 && moved > 20, "still {still}, moved {moved}");
}

#[test]
fn posed_covariances_follow_the_blend() {
    let cloud = canonical(0);
    let grid = figure_skinning_grid(16, 10).unwrap();
    let skel = skeleton();
    let mut pose = Pose::identity(skel.len());
    pose.set_axis_angle(skel.bone_index("r_leg").unwrap(), [1.0, 0.0, 0.0], -0.6);
    pose.set_axis_angle(skel.bone_index("spine").unwrap(), [0.0, 1.0, 0.0], 0.4);
    let posed = animate(&cloud, &grid, &skel, &pose).unwrap();
    posed.validate().unwrap();
    for i in 0..cloud.len() {
        let r = rotation_from_quat(&posed.rotations[i]).unwrap();
        assert!((r.determinant() - 1.0).abs() < 1e-9);
        assert!(posed.log_scales[i].iter().all(|s| s.is_finite()));
    }
}

#[test]
fn figure_grid_is_convex_under_random_queries() {
    let grid = figure_skinning_grid(32, 50).unwrap();
    assert!(grid.convexity_error() < 1e-5);
    let (lo, hi) = FIGURE_BBOX;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut w = vec![0.0; grid.n_bones()];
    for _ in 0..100_000 {
        // Includes points past the box, which clamp to the boundary voxels.
        let p = Vector3::from([0, 1, 2].map(|a| {
            let pad = 0.2 * (hi[a] - lo[a]);
            rng.gen_range(lo[a] - pad..hi[a] + pad)
        }));
        grid.query_into(&p, &mut w);
        let sum: f64 = w.iter().sum();
        assert!(w.iter().all(|&x| x >= 0.0), "negative weight at {p:?}");
        assert!((sum - 1.0).abs() < 1e-6, "weights sum to {sum} at {p:?}");
    }
}

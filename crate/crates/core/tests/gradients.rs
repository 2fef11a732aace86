//! Finite-difference verification of the analytic derivatives: the geometry
//! Jacobians, the SE(3) exponential against a matrix power series, and the
//! full renderer backward pass over random scenes.

mod common;

use common::*;
use nalgebra::{Matrix3, Vector2, Vector3, Vector6};
use rand::Rng;
use splat_slam::geometry::{self, PinholeCamera, Twist};
use splat_slam::render::RenderConfig;

#[test]
fn se3_exp_matches_20_term_matrix_series() {
    let mut r = rng(11);
    for _ in 0..200 {
        let xi = random_twist(&mut r, 1.0 / 3.0f64.sqrt());
        let closed = pose_to_matrix(&geometry::se3_exp(&xi));
        let series = se3_exp_series(&xi);
        assert!((closed - series).norm() < 1e-10, "series mismatch: {}", (closed - series).norm());
    }
}

#[test]
fn se3_log_round_trips_exp() {
    let mut r = rng(12);
    for _ in 0..500 {
        let xi = random_twist(&mut r, 1.0);
        if xi.omega.norm() >= std::f64::consts::PI - 1e-3 {
            continue;
        }
        let back = geometry::se3_log(&geometry::se3_exp(&xi));
        assert!((back.v - xi.v).norm() < 1e-9);
        assert!((back.omega - xi.omega).norm() < 1e-9);
    }
}

#[test]
fn transform_point_matches_homogeneous_matrix_oracle() {
    let mut r = rng(13);
    for _ in 0..200 {
        let pose = geometry::se3_exp(&random_twist(&mut r, 1.2));
        let x = Vector3::new(r.gen_range(-3.0..3.0), r.gen_range(-3.0..3.0), r.gen_range(-3.0..3.0));
        let m = pose_to_matrix(&pose);
        let hx = m * nalgebra::Vector4::new(x.x, x.y, x.z, 1.0);
        let got = geometry::transform_point(&pose, &x);
        assert!((got - Vector3::new(hx.x, hx.y, hx.z)).norm() < 1e-12);
    }
}

/// Every geometry Jacobian against central differences with step 1e-6 over
/// at least 1000 random samples with z > 0.1.
#[test]
fn geometry_jacobians_match_finite_differences() {
    let cam = PinholeCamera::new(120.0, 95.0, 64.0, 48.0, 128, 96);
    let mut r = rng(14);
    let h = 1e-6;
    let mut checked = 0usize;
    while checked < 1000 {
        let mu_c = Vector3::new(r.gen_range(-1.5..1.5), r.gen_range(-1.5..1.5), r.gen_range(0.1..4.0));

        // projection_jacobian vs FD of project
        let j = geometry::projection_jacobian(&cam, &mu_c).unwrap();
        for axis in 0..3 {
            let mut dp = mu_c;
            let mut dm = mu_c;
            dp[axis] += h;
            dm[axis] -= h;
            let (pp, pm) = (geometry::project(&cam, &dp).unwrap(), geometry::project(&cam, &dm).unwrap());
            let fd = (pp - pm) / (2.0 * h);
            for row in 0..2 {
                assert!(
                    grad_close(j[(row, axis)], fd[row], 1e-4, 1e-9),
                    "projection jacobian ({row},{axis}): {} vs {}",
                    j[(row, axis)],
                    fd[row]
                );
            }
        }

        // point_pose_jacobian: first-order prediction of the twist action.
        let jp = geometry::point_pose_jacobian(&mu_c);
        for k in 0..6 {
            let mut dx = Vector6::zeros();
            dx[k] = h;
            let tp = geometry::se3_exp(&Twist::from_vector(&dx));
            let tm = geometry::se3_exp(&Twist::from_vector(&(-dx)));
            let fd = (geometry::transform_point(&tp, &mu_c) - geometry::transform_point(&tm, &mu_c))
                / (2.0 * h);
            for row in 0..3 {
                assert!(grad_close(jp[(row, k)], fd[row], 1e-4, 1e-9));
            }
        }

        // pixel_pose_jacobian vs FD of the composed map.
        let jpx = geometry::pixel_pose_jacobian(&cam, &mu_c).unwrap();
        for k in 0..6 {
            let mut dx = Vector6::zeros();
            dx[k] = h;
            let tp = geometry::se3_exp(&Twist::from_vector(&dx));
            let tm = geometry::se3_exp(&Twist::from_vector(&(-dx)));
            let pp = geometry::project(&cam, &geometry::transform_point(&tp, &mu_c)).unwrap();
            let pm = geometry::project(&cam, &geometry::transform_point(&tm, &mu_c)).unwrap();
            let fd = (pp - pm) / (2.0 * h);
            for row in 0..2 {
                assert!(
                    grad_close(jpx[(row, k)], fd[row], 1e-4, 1e-7),
                    "pixel pose jacobian ({row},{k})"
                );
            }
        }
        checked += 1;
    }
}

/// The screen-covariance pose derivative (both chain-rule branches) against
/// finite differences of the full Sigma_I(xi).
#[test]
fn screen_cov_pose_jacobian_matches_finite_differences() {
    let cam = PinholeCamera::new(90.0, 82.0, 40.0, 30.0, 80, 60);
    let mut r = rng(15);
    let h = 1e-6;
    for _ in 0..300 {
        let pose = geometry::se3_exp(&random_twist(&mut r, 0.4));
        let mu_w = {
            // keep the point safely in front of the camera
            let z = r.gen_range(0.5..3.0);
            let pc = Vector3::new(r.gen_range(-0.4..0.4) * z, r.gen_range(-0.4..0.4) * z, z);
            pose.inverse().rotation * (pc - pose.translation)
        };
        let q = random_unit_quat(&mut r);
        let rot = splat_slam::splatmap::quat_to_rot(q);
        let scales = Vector3::new(r.gen_range(0.01..0.3), r.gen_range(0.01..0.3), r.gen_range(0.01..0.3));
        let sigma_w: Matrix3<f64> =
            rot * Matrix3::from_diagonal(&scales.map(|s| s * s)) * rot.transpose();

        let analytic = geometry::screen_cov_pose_jacobian(&cam, &pose, &mu_w, &sigma_w).unwrap();
        for k in 0..6 {
            let mut dx = Vector6::zeros();
            dx[k] = h;
            let tp = pose.left_update(&Twist::from_vector(&dx));
            let tm = pose.left_update(&Twist::from_vector(&(-dx)));
            let sp = geometry::screen_covariance(&cam, &tp, &mu_w, &sigma_w).unwrap();
            let sm = geometry::screen_covariance(&cam, &tm, &mu_w, &sigma_w).unwrap();
            let fd = (sp - sm) / (2.0 * h);
            for row in 0..2 {
                for col in 0..2 {
                    assert!(
                        grad_close(analytic[k][(row, col)], fd[(row, col)], 1e-4, 1e-6),
                        "cov pose jac k={k} ({row},{col}): {} vs {}",
                        analytic[k][(row, col)],
                        fd[(row, col)]
                    );
                }
            }
        }
    }
}

/// Full renderer backward pass against central differences on random scenes:
/// every class must pass the 1e-4 relative / 1e-7 absolute gate for >= 99% of
/// coordinates.
#[test]
fn render_backward_matches_finite_differences() {
    let cfg = RenderConfig::default();
    let names = ["sh", "opacity", "mean", "log_scales", "rotation", "pose"];
    let mut totals = [
        GradCheckStats::new(),
        GradCheckStats::new(),
        GradCheckStats::new(),
        GradCheckStats::new(),
        GradCheckStats::new(),
        GradCheckStats::new(),
    ];
    for seed in 0..8u64 {
        let (mut map, cam, pose) = random_scene(100 + seed, 6, cfg.sh_degree);
        let stats = gradcheck_scene(&mut map, &pose, &cam, &cfg, 1e-6, 1e-4, 1e-7);
        for (t, s) in totals.iter_mut().zip(stats.iter()) {
            t.merge(s);
        }
    }
    for (name, s) in names.iter().zip(totals.iter()) {
        let frac = s.pass_fraction();
        println!("gradcheck {name}: {}/{} pass ({:.4}), worst rel {:.3e}", s.checked - s.failed, s.checked, frac, s.worst_rel);
        assert!(frac >= 0.99, "{name} gradient check below 99%: {frac}");
    }
}

/// The tiled renderer against the brute-force per-pixel compositor.
#[test]
fn tiled_renderer_matches_brute_force_compositor() {
    let cfg = RenderConfig::default();
    let mut r = rng(77);
    for seed in 0..4u64 {
        let (map, cam, pose) = random_scene(300 + seed, 9, cfg.sh_degree);
        let (_, out) = splat_slam::render::render_map(&map, &pose, &cam, GRAD_BG, &cfg);
        for _ in 0..50 {
            let x = r.gen_range(0..cam.width);
            let y = r.gen_range(0..cam.height);
            let (c, a) = brute_force_pixel(&map, &pose, &cam, &cfg, GRAD_BG, Vector2::new(x as f64, y as f64));
            let got = out.color.pixel(x, y);
            for ch in 0..3 {
                assert!(
                    (got[ch] - c[ch]).abs() < 1e-10,
                    "pixel ({x},{y}) ch {ch}: {} vs {}",
                    got[ch],
                    c[ch]
                );
            }
            assert!((out.accum_opacity.get(x, y) - a).abs() < 1e-10);
        }
    }
}

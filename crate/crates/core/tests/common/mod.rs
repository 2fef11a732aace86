//! Shared test oracles: random scene generation, finite-difference gradient
//! checking against the analytic backward pass, and a brute-force per-pixel
//! compositor independent of the tiled rasterizer.
//!
//! Everything here recomputes results from first principles (matrix series,
//! central differences, per-pixel loops over all splats) and never calls into
//! the code path under test to produce an expected value.

#![allow(dead_code)]

use nalgebra::{Matrix4, Vector2, Vector3, Vector6};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use splat_slam::geometry::{self, PinholeCamera, SE3Pose, Twist};
use splat_slam::img::{ImageRgb, ScalarMap};
use splat_slam::render::{self, MapGradients, RenderConfig};
use splat_slam::sh;
use splat_slam::splatmap::{logit, GaussianSplat, SplatMap};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// 20-term matrix power series for exp of a 4x4 twist matrix; the independent
/// oracle for the closed-form Rodrigues exponential.
pub fn se3_exp_series(xi: &Twist) -> Matrix4<f64> {
    let mut hat = Matrix4::zeros();
    hat.fixed_view_mut::<3, 3>(0, 0).copy_from(&geometry::skew(&xi.omega));
    hat.fixed_view_mut::<3, 1>(0, 3).copy_from(&xi.v);
    let mut term = Matrix4::identity();
    let mut sum = Matrix4::identity();
    for k in 1..=20 {
        term = term * hat / k as f64;
        sum += term;
    }
    sum
}

pub fn pose_to_matrix(p: &SE3Pose) -> Matrix4<f64> {
    let mut m = Matrix4::identity();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&p.rotation_matrix());
    m.fixed_view_mut::<3, 1>(0, 3).copy_from(&p.translation);
    m
}

pub fn random_twist(rng: &mut ChaCha8Rng, scale: f64) -> Twist {
    Twist {
        v: Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)) * scale,
        omega: Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
            * scale,
    }
}

pub fn random_unit_quat(rng: &mut ChaCha8Rng) -> [f64; 4] {
    loop {
        let q = [
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        ];
        let n: f64 = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 0.2 {
            return [q[0] / n, q[1] / n, q[2] / n, q[3] / n];
        }
    }
}

/// A random well-conditioned scene: splats inside the frustum, opacities away
/// from the clamp, colors strictly positive in every view direction.
pub fn random_scene(seed: u64, n_splats: usize, sh_degree: usize) -> (SplatMap, PinholeCamera, SE3Pose) {
    let mut r = rng(seed);
    let cam = PinholeCamera::new(22.0, 20.0, 7.5, 7.5, 16, 16);
    let mut splats = Vec::new();
    for _ in 0..n_splats {
        let z = r.gen_range(0.8..2.5);
        let x = r.gen_range(-0.35..0.35) * z;
        let y = r.gen_range(-0.35..0.35) * z;
        let mut g = GaussianSplat::new(
            Vector3::new(x, y, z),
            random_unit_quat(&mut r),
            Vector3::new(
                r.gen_range(0.03f64..0.22).ln(),
                r.gen_range(0.03f64..0.22).ln(),
                r.gen_range(0.03f64..0.22).ln(),
            ),
            logit(r.gen_range(0.15..0.92)),
        );
        g.sh[0] = [
            r.gen_range(0.35..0.95) / sh::SH_C0,
            r.gen_range(0.35..0.95) / sh::SH_C0,
            r.gen_range(0.35..0.95) / sh::SH_C0,
        ];
        for k in 1..sh::coeff_count(sh_degree) {
            for c in 0..3 {
                g.sh[k][c] = r.gen_range(-0.12..0.12);
            }
        }
        splats.push(g);
    }
    let mut map = SplatMap::new();
    map.insert(splats);
    let pose = geometry::se3_exp(&random_twist(&mut r, 0.05));
    (map, cam, pose)
}

pub const GRAD_BG: [f64; 3] = [0.13, 0.21, 0.08];
pub const ACCUM_WEIGHT: f64 = 0.25;

/// Scalar probe loss: sum of all rendered channels plus a weighted sum of the
/// accumulated opacity, so gradients through both outputs are exercised.
pub fn probe_loss(map: &SplatMap, pose: &SE3Pose, cam: &PinholeCamera, cfg: &RenderConfig) -> f64 {
    let (_, out) = render::render_map(map, pose, cam, GRAD_BG, cfg);
    out.color.data.iter().sum::<f64>() + ACCUM_WEIGHT * out.accum_opacity.data.iter().sum::<f64>()
}

pub fn probe_gradients(
    map: &SplatMap,
    pose: &SE3Pose,
    cam: &PinholeCamera,
    cfg: &RenderConfig,
) -> MapGradients {
    let (screen, out) = render::render_map(map, pose, cam, GRAD_BG, cfg);
    let d_color = ImageRgb::filled(cam.width, cam.height, [1.0, 1.0, 1.0]);
    let d_accum = ScalarMap::filled(cam.width, cam.height, ACCUM_WEIGHT);
    render::render_backward(map, &screen, pose, cam, &out, &d_color, Some(&d_accum), cfg).unwrap()
}

/// Combined absolute/relative closeness test used by every gradient check.
pub fn grad_close(analytic: f64, fd: f64, rel: f64, abs: f64) -> bool {
    (analytic - fd).abs() <= abs + rel * analytic.abs().max(fd.abs())
}

pub struct GradCheckStats {
    pub checked: usize,
    pub failed: usize,
    pub worst_rel: f64,
}

impl GradCheckStats {
    pub fn new() -> Self {
        Self { checked: 0, failed: 0, worst_rel: 0.0 }
    }

    pub fn record(&mut self, analytic: f64, fd: f64, rel: f64, abs: f64) {
        self.checked += 1;
        if !grad_close(analytic, fd, rel, abs) {
            self.failed += 1;
        }
        let denom = analytic.abs().max(fd.abs()).max(1e-12);
        self.worst_rel = self.worst_rel.max((analytic - fd).abs() / denom);
    }

    pub fn merge(&mut self, other: &GradCheckStats) {
        self.checked += other.checked;
        self.failed += other.failed;
        self.worst_rel = self.worst_rel.max(other.worst_rel);
    }

    pub fn pass_fraction(&self) -> f64 {
        if self.checked == 0 {
            1.0
        } else {
            1.0 - self.failed as f64 / self.checked as f64
        }
    }
}

/// Central-difference check of every parameter class of the render probe loss
/// on one scene. Returns per-class stats keyed in a fixed order:
/// sh, opacity, mean, scales, rotation, pose.
pub fn gradcheck_scene(
    map: &mut SplatMap,
    pose: &SE3Pose,
    cam: &PinholeCamera,
    cfg: &RenderConfig,
    h: f64,
    rel: f64,
    abs: f64,
) -> [GradCheckStats; 6] {
    let analytic = probe_gradients(map, pose, cam, cfg);
    let mut stats = [
        GradCheckStats::new(),
        GradCheckStats::new(),
        GradCheckStats::new(),
        GradCheckStats::new(),
        GradCheckStats::new(),
        GradCheckStats::new(),
    ];
    let n = map.len();
    let n_coeff = sh::coeff_count(cfg.sh_degree);

    for i in 0..n {
        for k in 0..n_coeff {
            for c in 0..3 {
                let orig = map.splats()[i].sh[k][c];
                map.splats_mut()[i].sh[k][c] = orig + h;
                let lp = probe_loss(map, pose, cam, cfg);
                map.splats_mut()[i].sh[k][c] = orig - h;
                let lm = probe_loss(map, pose, cam, cfg);
                map.splats_mut()[i].sh[k][c] = orig;
                stats[0].record(analytic.d_sh[i][k][c], (lp - lm) / (2.0 * h), rel, abs);
            }
        }
        {
            let orig = map.splats()[i].opacity_logit;
            map.splats_mut()[i].opacity_logit = orig + h;
            let lp = probe_loss(map, pose, cam, cfg);
            map.splats_mut()[i].opacity_logit = orig - h;
            let lm = probe_loss(map, pose, cam, cfg);
            map.splats_mut()[i].opacity_logit = orig;
            stats[1].record(analytic.d_opacity_logit[i], (lp - lm) / (2.0 * h), rel, abs);
        }
        for axis in 0..3 {
            let orig = map.splats()[i].mean_w[axis];
            map.splats_mut()[i].mean_w[axis] = orig + h;
            let lp = probe_loss(map, pose, cam, cfg);
            map.splats_mut()[i].mean_w[axis] = orig - h;
            let lm = probe_loss(map, pose, cam, cfg);
            map.splats_mut()[i].mean_w[axis] = orig;
            stats[2].record(analytic.d_mean[i][axis], (lp - lm) / (2.0 * h), rel, abs);
        }
        for axis in 0..3 {
            let orig = map.splats()[i].log_scales[axis];
            map.splats_mut()[i].log_scales[axis] = orig + h;
            let lp = probe_loss(map, pose, cam, cfg);
            map.splats_mut()[i].log_scales[axis] = orig - h;
            let lm = probe_loss(map, pose, cam, cfg);
            map.splats_mut()[i].log_scales[axis] = orig;
            stats[3].record(analytic.d_log_scales[i][axis], (lp - lm) / (2.0 * h), rel, abs);
        }
        for k in 0..4 {
            let orig = map.splats()[i].rot[k];
            map.splats_mut()[i].rot[k] = orig + h;
            let lp = probe_loss(map, pose, cam, cfg);
            map.splats_mut()[i].rot[k] = orig - h;
            let lm = probe_loss(map, pose, cam, cfg);
            map.splats_mut()[i].rot[k] = orig;
            stats[4].record(analytic.d_rot[i][k], (lp - lm) / (2.0 * h), rel, abs);
        }
    }

    let pose_grad = analytic.d_pose.to_vector();
    for k in 0..6 {
        let mut dp = Vector6::zeros();
        dp[k] = h;
        let tp = pose.left_update(&Twist::from_vector(&dp));
        let tm = pose.left_update(&Twist::from_vector(&(-dp)));
        let lp = probe_loss(map, &tp, cam, cfg);
        let lm = probe_loss(map, &tm, cam, cfg);
        stats[5].record(pose_grad[k], (lp - lm) / (2.0 * h), rel, abs);
    }

    stats
}

/// Brute-force compositor: evaluates one pixel by walking every projected
/// splat in depth order, with the same stated contract rules (near-plane and
/// 3-sigma image cull, alpha skip and clamp, early stop) but none of the tile
/// machinery. Projection and color are recomputed from first principles.
pub fn brute_force_pixel(
    map: &SplatMap,
    pose: &SE3Pose,
    cam: &PinholeCamera,
    cfg: &RenderConfig,
    background: [f64; 3],
    px: Vector2<f64>,
) -> ([f64; 3], f64) {
    struct Entry {
        depth: f64,
        index: usize,
        mean: Vector2<f64>,
        inv: nalgebra::Matrix2<f64>,
        opacity: f64,
        rgb: [f64; 3],
    }
    let mut entries = Vec::new();
    let r_pose = pose.rotation_matrix();
    let center = pose.camera_center();
    for (i, g) in map.splats().iter().enumerate() {
        let mu_c = geometry::transform_point(pose, &g.mean_w);
        if mu_c.z <= geometry::Z_MIN {
            continue;
        }
        let mean = match geometry::project(cam, &mu_c) {
            Ok(m) => m,
            Err(_) => continue,
        };
        let j = geometry::projection_jacobian(cam, &mu_c).unwrap();
        let w = j * r_pose;
        let mut cov = w * splat_slam::splatmap::covariance_world(g) * w.transpose();
        cov[(0, 0)] += cfg.eps_cov;
        cov[(1, 1)] += cfg.eps_cov;
        // 3-sigma whole-image cull, recomputed via the eigenvalues.
        let half_tr = 0.5 * (cov[(0, 0)] + cov[(1, 1)]);
        let det = cov[(0, 0)] * cov[(1, 1)] - cov[(0, 1)] * cov[(1, 0)];
        let lam_max = half_tr + (half_tr * half_tr - det).max(0.0).sqrt();
        let radius = cfg.cull_sigma * lam_max.sqrt();
        if mean.x + radius < 0.0
            || mean.y + radius < 0.0
            || mean.x - radius > (cam.width - 1) as f64
            || mean.y - radius > (cam.height - 1) as f64
        {
            continue;
        }
        if det <= 0.0 {
            continue;
        }
        let inv = nalgebra::Matrix2::new(cov[(1, 1)], -cov[(0, 1)], -cov[(1, 0)], cov[(0, 0)]) / det;
        let dir = (g.mean_w - center).normalize();
        let raw = splat_slam::splatmap::eval_color(g, cfg.sh_degree, &dir);
        entries.push(Entry {
            depth: mu_c.z,
            index: i,
            mean,
            inv,
            opacity: g.opacity(),
            rgb: [raw[0].max(0.0), raw[1].max(0.0), raw[2].max(0.0)],
        });
    }
    entries.sort_by(|a, b| a.depth.partial_cmp(&b.depth).unwrap().then(a.index.cmp(&b.index)));

    let mut t = 1.0f64;
    let mut c = [0.0f64; 3];
    for e in &entries {
        let d = px - e.mean;
        let alpha = (e.opacity * (-0.5 * d.dot(&(e.inv * d))).exp()).min(cfg.alpha_clamp);
        if alpha < cfg.alpha_skip {
            continue;
        }
        for ch in 0..3 {
            c[ch] += e.rgb[ch] * alpha * t;
        }
        t *= 1.0 - alpha;
        if t < cfg.t_stop {
            break;
        }
    }
    for ch in 0..3 {
        c[ch] += t * background[ch];
    }
    (c, 1.0 - t)
}

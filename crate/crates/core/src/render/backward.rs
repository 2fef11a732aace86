//! Reverse-mode derivative of the composited image with respect to every
//! splat parameter and the camera pose twist.
//!
//! The pass replays each pixel's contributor list front-to-back to rebuild the
//! transmittance sequence, accumulates per-screen-splat gradients of the
//! projected quantities (color, base opacity, projected mean, screen
//! covariance), then chains once per splat back to world parameters and the
//! pose. The pose branch combines the point Jacobian `[I | -[mu_c]_x]`, the
//! derivative of the projection Jacobian through the camera-frame mean, the
//! rotation branch `dR = [domega]_x R` of the screen covariance, and the
//! camera-center dependence of the view direction used for color.

use super::{check_generation, splat_alpha_at, RenderConfig, RenderOutput, ScreenSplat};
use crate::error::Result;
use crate::geometry::{self, PinholeCamera, SE3Pose, Twist};
use crate::img::{ImageRgb, ScalarMap};
use crate::sh;
use crate::splatmap::{covariance_world, eval_color, quat_gradient, SplatMap};
use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};

/// Gradients of a scalar loss with respect to all map parameters and the pose.
#[derive(Debug, Clone)]
pub struct MapGradients {
    pub d_mean: Vec<Vector3<f64>>,
    pub d_rot: Vec<[f64; 4]>,
    pub d_log_scales: Vec<Vector3<f64>>,
    pub d_opacity_logit: Vec<f64>,
    pub d_sh: Vec<[[f64; 3]; sh::MAX_COEFFS]>,
    pub d_pose: Twist,
}

impl MapGradients {
    pub fn zeros(n: usize) -> Self {
        Self {
            d_mean: vec![Vector3::zeros(); n],
            d_rot: vec![[0.0; 4]; n],
            d_log_scales: vec![Vector3::zeros(); n],
            d_opacity_logit: vec![0.0; n],
            d_sh: vec![[[0.0; 3]; sh::MAX_COEFFS]; n],
            d_pose: Twist::zero(),
        }
    }

    pub fn add_assign(&mut self, other: &MapGradients) {
        for i in 0..self.d_mean.len() {
            self.d_mean[i] += other.d_mean[i];
            for k in 0..4 {
                self.d_rot[i][k] += other.d_rot[i][k];
            }
            self.d_log_scales[i] += other.d_log_scales[i];
            self.d_opacity_logit[i] += other.d_opacity_logit[i];
            for k in 0..sh::MAX_COEFFS {
                for c in 0..3 {
                    self.d_sh[i][k][c] += other.d_sh[i][k][c];
                }
            }
        }
        self.d_pose.v += other.d_pose.v;
        self.d_pose.omega += other.d_pose.omega;
    }
}

/// Per-screen-splat gradient accumulators filled by the compositing replay.
struct ScreenGrads {
    rgb: Vec<[f64; 3]>,
    base: Vec<f64>,
    mean_i: Vec<Vector2<f64>>,
    cov: Vec<Matrix2<f64>>,
    touched: Vec<bool>,
}

/// Backward pass. `d_color` is the loss gradient with respect to the rendered
/// image; `d_accum` (optional) the gradient with respect to the accumulated
/// opacity map. The output must have been rendered from the same map
/// generation, otherwise `StaleRenderState` is returned.
pub fn render_backward(
    map: &SplatMap,
    screen_splats: &[ScreenSplat],
    pose: &SE3Pose,
    cam: &PinholeCamera,
    output: &RenderOutput,
    d_color: &ImageRgb,
    d_accum: Option<&ScalarMap>,
    cfg: &RenderConfig,
) -> Result<MapGradients> {
    check_generation(output, map)?;

    let n_screen = screen_splats.len();
    let mut sg = ScreenGrads {
        rgb: vec![[0.0; 3]; n_screen],
        base: vec![0.0; n_screen],
        mean_i: vec![Vector2::zeros(); n_screen],
        cov: vec![Matrix2::zeros(); n_screen],
        touched: vec![false; n_screen],
    };

    let bg = output.background;
    let (w, h) = (cam.width, cam.height);
    let mut alphas: Vec<f64> = Vec::new();
    let mut clamped: Vec<bool> = Vec::new();
    let mut trans: Vec<f64> = Vec::new();

    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            let list = &output.contribs[output.offsets[p] as usize..output.offsets[p + 1] as usize];
            if list.is_empty() {
                continue;
            }
            let px = Vector2::new(x as f64, y as f64);
            let gc = d_color.pixel(x, y);
            let ga = d_accum.map_or(0.0, |m| m.get(x, y));
            if gc == [0.0; 3] && ga == 0.0 {
                continue;
            }

            // Replay the forward transmittance sequence.
            alphas.clear();
            clamped.clear();
            trans.clear();
            let mut t = 1.0;
            for &si in list {
                let raw = splat_alpha_at(&screen_splats[si as usize], &px);
                let is_clamped = raw > cfg.alpha_clamp;
                let a = raw.min(cfg.alpha_clamp);
                alphas.push(a);
                clamped.push(is_clamped);
                trans.push(t);
                t *= 1.0 - a;
            }
            let t_final = t;

            // Gradient flowing into the final transmittance: color background
            // term plus the accumulated-opacity output (accum = 1 - T_final).
            let mut g_t_next =
                gc[0] * bg[0] + gc[1] * bg[1] + gc[2] * bg[2] - ga;
            let _ = t_final;

            for i in (0..list.len()).rev() {
                let si = list[i] as usize;
                let s = &screen_splats[si];
                let a = alphas[i];
                let t_i = trans[i];
                let dot_c = gc[0] * s.rgb[0] + gc[1] * s.rgb[1] + gc[2] * s.rgb[2];

                sg.touched[si] = true;
                for ch in 0..3 {
                    sg.rgb[si][ch] += gc[ch] * a * t_i;
                }

                let d_alpha = dot_c * t_i - g_t_next * t_i;
                if !clamped[i] {
                    let gauss = a / s.base_opacity;
                    sg.base[si] += d_alpha * gauss;
                    let g_gauss = d_alpha * s.base_opacity;
                    let d = px - s.mean_i;
                    let md = s.cov_inv * d;
                    sg.mean_i[si] += md * (g_gauss * gauss);
                    sg.cov[si] += md * md.transpose() * (0.5 * g_gauss * gauss);
                }

                g_t_next = dot_c * a + g_t_next * (1.0 - a);
            }
        }
    }

    // Chain screen-space gradients to world parameters and the pose.
    let mut grads = MapGradients::zeros(map.len());
    let r_pose = pose.rotation_matrix();
    let cam_center = pose.camera_center();
    let n_coeff = sh::coeff_count(cfg.sh_degree);

    for si in 0..n_screen {
        if !sg.touched[si] {
            continue;
        }
        let s = &screen_splats[si];
        let src = s.source_index as usize;
        let g = &map.splats()[src];

        let mu_c = geometry::transform_point(pose, &g.mean_w);
        let j = geometry::projection_jacobian(cam, &mu_c)?;
        let w_mat = j * r_pose;
        let sigma_w = covariance_world(g);

        // Covariance branch.
        let g_cov = sg.cov[si];
        let g_sigma_w = w_mat.transpose() * g_cov * w_mat;
        let g_w = (g_cov + g_cov.transpose()) * w_mat * sigma_w;
        let g_j = g_w * r_pose.transpose();
        let k_mat = j.transpose() * g_w * r_pose.transpose();
        grads.d_pose.omega += Vector3::new(
            k_mat[(2, 1)] - k_mat[(1, 2)],
            k_mat[(0, 2)] - k_mat[(2, 0)],
            k_mat[(1, 0)] - k_mat[(0, 1)],
        );

        let dj = geometry::projection_jacobian_point_derivative(cam, &mu_c)?;
        let mut g_mu_c = Vector3::new(
            g_j.component_mul(&dj[0]).sum(),
            g_j.component_mul(&dj[1]).sum(),
            g_j.component_mul(&dj[2]).sum(),
        );

        // Projected-mean branch.
        g_mu_c += j.transpose() * sg.mean_i[si];

        grads.d_mean[src] += r_pose.transpose() * g_mu_c;
        grads.d_pose.v += g_mu_c;
        grads.d_pose.omega += mu_c.cross(&g_mu_c);

        // Factorization: Sigma_W = R_s diag(exp(2 l)) R_s^T.
        let r_s = g.rotation_matrix();
        let d_diag = Vector3::new(
            (2.0 * g.log_scales.x).exp(),
            (2.0 * g.log_scales.y).exp(),
            (2.0 * g.log_scales.z).exp(),
        );
        let g_r_s = (g_sigma_w + g_sigma_w.transpose()) * r_s * Matrix3::from_diagonal(&d_diag);
        let gq = quat_gradient(g.rot, &g_r_s);
        for k in 0..4 {
            grads.d_rot[src][k] += gq[k];
        }
        let m3 = r_s.transpose() * g_sigma_w * r_s;
        for k in 0..3 {
            grads.d_log_scales[src][k] += 2.0 * d_diag[k] * m3[(k, k)];
        }

        // Color branch: SH coefficients plus the view-direction dependence of
        // the basis (affects the world mean and, through the camera center,
        // the translational twist).
        let u = g.mean_w - cam_center;
        let norm_u = u.norm();
        let v_dir = u / norm_u;
        let raw = eval_color(g, cfg.sh_degree, &v_dir);
        let basis = sh::basis(cfg.sh_degree, [v_dir.x, v_dir.y, v_dir.z]);
        let basis_grad = sh::basis_gradient(cfg.sh_degree, [v_dir.x, v_dir.y, v_dir.z]);
        let mut g_v = Vector3::zeros();
        for ch in 0..3 {
            if raw[ch] <= 0.0 {
                continue; // clamped to zero in the forward pass
            }
            let gch = sg.rgb[si][ch];
            if gch == 0.0 {
                continue;
            }
            for k in 0..n_coeff {
                grads.d_sh[src][k][ch] += gch * basis[k];
                g_v.x += gch * g.sh[k][ch] * basis_grad[0][k];
                g_v.y += gch * g.sh[k][ch] * basis_grad[1][k];
                g_v.z += gch * g.sh[k][ch] * basis_grad[2][k];
            }
        }
        if g_v != Vector3::zeros() {
            let g_u = (g_v - v_dir * v_dir.dot(&g_v)) / norm_u;
            grads.d_mean[src] += g_u;
            grads.d_pose.v += r_pose * g_u;
        }

        // Opacity branch through the sigmoid.
        let a = s.base_opacity;
        grads.d_opacity_logit[src] += sg.base[si] * a * (1.0 - a);
    }

    Ok(grads)
}

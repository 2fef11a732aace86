//! Differentiable forward rasterization of the splat map and the analytic
//! backward pass.
//!
//! Conventions fixed here and relied on by the backward pass and the tests:
//! - pixel (x, y) is sampled at the continuous position (x, y);
//! - screen-space opacity is the unnormalized Gaussian density times the
//!   sigmoid opacity, `alpha(p) = a * exp(-0.5 d^T Sigma^-1 d)`, clamped to
//!   `alpha_clamp`;
//! - contributions with `alpha < alpha_skip` are skipped;
//! - compositing is front-to-back and stops once transmittance drops below
//!   `t_stop`; the remaining transmittance multiplies the background;
//! - the screen covariance gets `eps_cov` added to its diagonal before
//!   inversion, and gradients flow through the regularized matrix.

mod backward;

pub use backward::{render_backward, MapGradients};

use crate::error::{Result, SlamError};
use crate::geometry::{self, PinholeCamera, SE3Pose};
use crate::img::{ImageRgb, ScalarMap};
use crate::splatmap::{eval_color, covariance_world, SplatMap};
use nalgebra::{Matrix2, Vector2, Vector3};

/// Rasterizer constants; all exposed through the pipeline config.
#[derive(Debug, Clone, Copy)]
pub struct RenderConfig {
    /// Diagonal regularization of the screen covariance, pixels^2.
    pub eps_cov: f64,
    /// Early-stop transmittance.
    pub t_stop: f64,
    /// Per-pixel opacity ceiling; keeps log-transmittance finite.
    pub alpha_clamp: f64,
    /// Contributions below this opacity are skipped.
    pub alpha_skip: f64,
    /// Tile edge length for screen-space binning, pixels.
    pub tile_size: usize,
    /// A splat is culled when its cull_sigma ellipse misses the image.
    pub cull_sigma: f64,
    /// Rasterization bounding-box radius, in sigmas; slightly larger than
    /// `cull_sigma` so the `alpha_skip` rule is the only per-pixel cutoff.
    pub bbox_sigma: f64,
    /// Spherical-harmonics degree used for view-dependent color.
    pub sh_degree: usize,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            eps_cov: 0.3,
            t_stop: 1e-4,
            alpha_clamp: 0.999,
            alpha_skip: 1.0 / 255.0,
            tile_size: 16,
            cull_sigma: 3.0,
            bbox_sigma: 3.5,
            sh_degree: 2,
        }
    }
}

/// A splat projected into the current view.
#[derive(Debug, Clone)]
pub struct ScreenSplat {
    /// Projected mean, pixels.
    pub mean_i: Vector2<f64>,
    /// Regularized screen covariance, pixels^2.
    pub cov_i: Matrix2<f64>,
    /// Cached inverse of `cov_i`.
    pub cov_inv: Matrix2<f64>,
    /// Sigmoid of the opacity logit.
    pub base_opacity: f64,
    /// View-evaluated color, clamped to [0, inf).
    pub rgb: [f64; 3],
    /// Camera-space depth used for sorting.
    pub depth: f64,
    /// Index of the source splat in the map.
    pub source_index: u32,
}

/// Per-splat footprint record kept in the render output for the maintenance
/// statistics.
#[derive(Debug, Clone, Copy)]
pub struct SplatFootprint {
    pub source_index: u32,
    /// Area of the 1-sigma screen ellipse, pixels^2.
    pub area: f64,
}

/// Forward render result. Contributor lists are retained in CSR layout so the
/// backward pass and the statistics update can replay compositing exactly.
#[derive(Debug, Clone)]
pub struct RenderOutput {
    pub color: ImageRgb,
    /// Accumulated opacity per pixel, `1 - final transmittance`.
    pub accum_opacity: ScalarMap,
    /// CSR row offsets, one per pixel plus one.
    pub offsets: Vec<u32>,
    /// Contributor indices into the screen-splat list, front-to-back.
    pub contribs: Vec<u32>,
    /// Composited weight `alpha_i T_i` of each contribution.
    pub weights: Vec<f64>,
    /// Footprints of all projected (not culled) splats.
    pub footprints: Vec<SplatFootprint>,
    /// Map generation this output was rendered from.
    pub generation: u64,
    pub background: [f64; 3],
}

impl RenderOutput {
    /// Contributor slice for pixel (x, y).
    pub fn pixel_contribs(&self, width: usize, x: usize, y: usize) -> &[u32] {
        let p = y * width + x;
        &self.contribs[self.offsets[p] as usize..self.offsets[p + 1] as usize]
    }
}

#[inline]
fn max_eigenvalue_2x2(m: &Matrix2<f64>) -> f64 {
    let half_tr = 0.5 * (m[(0, 0)] + m[(1, 1)]);
    let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
    half_tr + (half_tr * half_tr - det).max(0.0).sqrt()
}

/// Project every splat into the view, cull splats behind the near plane or
/// whose `cull_sigma` ellipse misses the image, and sort front-to-back.
/// Ties in depth break by map index for determinism.
pub fn project_splats(
    map: &SplatMap,
    pose: &SE3Pose,
    cam: &PinholeCamera,
    cfg: &RenderConfig,
) -> Vec<ScreenSplat> {
    let r_pose = pose.rotation_matrix();
    let cam_center = pose.camera_center();
    let mut out = Vec::new();
    for (idx, g) in map.splats().iter().enumerate() {
        let mu_c = geometry::transform_point(pose, &g.mean_w);
        if mu_c.z <= geometry::Z_MIN {
            continue;
        }
        let mean_i = match geometry::project(cam, &mu_c) {
            Ok(p) => p,
            Err(_) => continue,
        };
        let j = match geometry::projection_jacobian(cam, &mu_c) {
            Ok(j) => j,
            Err(_) => continue,
        };
        let w = j * r_pose;
        let sigma_w = covariance_world(g);
        let mut cov_i = w * sigma_w * w.transpose();
        cov_i[(0, 0)] += cfg.eps_cov;
        cov_i[(1, 1)] += cfg.eps_cov;

        let radius = cfg.cull_sigma * max_eigenvalue_2x2(&cov_i).sqrt();
        if mean_i.x + radius < 0.0
            || mean_i.y + radius < 0.0
            || mean_i.x - radius > (cam.width - 1) as f64
            || mean_i.y - radius > (cam.height - 1) as f64
        {
            continue;
        }

        let det = cov_i[(0, 0)] * cov_i[(1, 1)] - cov_i[(0, 1)] * cov_i[(1, 0)];
        if det <= 0.0 || !det.is_finite() {
            continue;
        }
        let cov_inv = Matrix2::new(cov_i[(1, 1)], -cov_i[(0, 1)], -cov_i[(1, 0)], cov_i[(0, 0)]) / det;

        let view_dir = (g.mean_w - cam_center).normalize();
        let raw = eval_color(g, cfg.sh_degree, &view_dir);
        let rgb = [raw[0].max(0.0), raw[1].max(0.0), raw[2].max(0.0)];

        out.push(ScreenSplat {
            mean_i,
            cov_i,
            cov_inv,
            base_opacity: g.opacity(),
            rgb,
            depth: mu_c.z,
            source_index: idx as u32,
        });
    }
    out.sort_by(|a, b| {
        a.depth
            .partial_cmp(&b.depth)
            .unwrap()
            .then(a.source_index.cmp(&b.source_index))
    });
    out
}

/// Screen-space opacity of one splat at a pixel, before clamping.
#[inline]
pub(crate) fn splat_alpha_at(s: &ScreenSplat, px: &Vector2<f64>) -> f64 {
    let d = px - s.mean_i;
    let maha = d.dot(&(s.cov_inv * d));
    s.base_opacity * (-0.5 * maha).exp()
}

/// Alpha-composite the sorted screen splats over the background.
pub fn render(
    screen_splats: &[ScreenSplat],
    cam: &PinholeCamera,
    background: [f64; 3],
    cfg: &RenderConfig,
    generation: u64,
) -> RenderOutput {
    let (w, h) = (cam.width, cam.height);
    let tile = cfg.tile_size.max(1);
    let tiles_x = w.div_ceil(tile);
    let tiles_y = h.div_ceil(tile);

    // Bin splats into tiles; iterating in sorted order keeps every per-tile
    // list depth-ordered.
    let mut bins: Vec<Vec<u32>> = vec![Vec::new(); tiles_x * tiles_y];
    for (si, s) in screen_splats.iter().enumerate() {
        let radius = cfg.bbox_sigma * max_eigenvalue_2x2(&s.cov_i).sqrt();
        let x0 = ((s.mean_i.x - radius).floor().max(0.0) as usize).min(w - 1) / tile;
        let x1 = ((s.mean_i.x + radius).ceil().max(0.0) as usize).min(w - 1) / tile;
        let y0 = ((s.mean_i.y - radius).floor().max(0.0) as usize).min(h - 1) / tile;
        let y1 = ((s.mean_i.y + radius).ceil().max(0.0) as usize).min(h - 1) / tile;
        if s.mean_i.x + radius < 0.0 || s.mean_i.y + radius < 0.0 {
            continue;
        }
        for ty in y0..=y1 {
            for tx in x0..=x1 {
                bins[ty * tiles_x + tx].push(si as u32);
            }
        }
    }

    let mut color = ImageRgb::new(w, h);
    let mut accum = ScalarMap::new(w, h);
    let mut offsets = Vec::with_capacity(w * h + 1);
    let mut contribs = Vec::new();
    let mut weights = Vec::new();
    offsets.push(0u32);

    for y in 0..h {
        for x in 0..w {
            let px = Vector2::new(x as f64, y as f64);
            let bin = &bins[(y / tile) * tiles_x + (x / tile)];
            let mut t = 1.0f64;
            let mut c = [0.0f64; 3];
            for &si in bin {
                let s = &screen_splats[si as usize];
                let alpha = splat_alpha_at(s, &px).min(cfg.alpha_clamp);
                if alpha < cfg.alpha_skip {
                    continue;
                }
                let weight = alpha * t;
                for ch in 0..3 {
                    c[ch] += s.rgb[ch] * weight;
                }
                contribs.push(si);
                weights.push(weight);
                t *= 1.0 - alpha;
                if t < cfg.t_stop {
                    break;
                }
            }
            for ch in 0..3 {
                c[ch] += t * background[ch];
            }
            color.set_pixel(x, y, c);
            accum.set(x, y, 1.0 - t);
            offsets.push(contribs.len() as u32);
        }
    }

    let footprints = screen_splats
        .iter()
        .map(|s| {
            let det = s.cov_i[(0, 0)] * s.cov_i[(1, 1)] - s.cov_i[(0, 1)] * s.cov_i[(1, 0)];
            SplatFootprint { source_index: s.source_index, area: std::f64::consts::PI * det.max(0.0).sqrt() }
        })
        .collect();

    RenderOutput {
        color,
        accum_opacity: accum,
        offsets,
        contribs,
        weights,
        footprints,
        generation,
        background,
    }
}

/// Convenience wrapper: project then composite against the current map.
pub fn render_map(
    map: &SplatMap,
    pose: &SE3Pose,
    cam: &PinholeCamera,
    background: [f64; 3],
    cfg: &RenderConfig,
) -> (Vec<ScreenSplat>, RenderOutput) {
    let screen = project_splats(map, pose, cam, cfg);
    let out = render(&screen, cam, background, cfg, map.generation());
    (screen, out)
}

/// Guard shared by the backward pass and the statistics update.
pub(crate) fn check_generation(output: &RenderOutput, map: &SplatMap) -> Result<()> {
    if output.generation != map.generation() {
        return Err(SlamError::StaleRenderState { output: output.generation, map: map.generation() });
    }
    Ok(())
}

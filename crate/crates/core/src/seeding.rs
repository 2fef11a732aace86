//! One-shot map seeding: dense correspondence scoring, epipolar filtering,
//! blue-noise thinning, pairwise DLT triangulation with hypothesis selection,
//! surface-aligned Gaussian initialization, and Poisson-disk subsampling.

use crate::error::{Result, SlamError};
use crate::geometry::{self, PinholeCamera, SE3Pose};
use crate::keyframe::Keyframe;
use crate::matcher::DenseMatcher;
use crate::sh;
use crate::splatmap::{logit, GaussianSplat, SplatMap};
use nalgebra::{Matrix3, Matrix3x4, Matrix4, RowVector4, Vector2, Vector3};
use std::io::{BufRead, Write};
use std::path::Path;

/// Seeding configuration; every constant is exposed through the pipeline
/// config file.
#[derive(Debug, Clone, Copy)]
pub struct SeedingConfig {
    /// Neighbour keyframes consulted per reference keyframe.
    pub k_neighbours: usize,
    /// Feature grid stride, full-resolution pixels.
    pub feature_stride: usize,
    /// Patch edge for the reference matcher descriptors (odd).
    pub patch_size: usize,
    /// Matcher search half-window, full-resolution pixels.
    pub search_radius_px: f64,
    /// Raw-confidence blend weights: similarity, forward-backward, epipolar.
    pub w_sim: f64,
    pub w_fb: f64,
    pub w_epi: f64,
    /// Scales of the consistency kernels, pixels.
    pub sigma_fb: f64,
    pub sigma_epi: f64,
    /// Piecewise-linear confidence mapping thresholds.
    pub gamma0: f64,
    pub gamma1: f64,
    /// Hard per-match gates, pixels.
    pub epi_max: f64,
    pub fb_max: f64,
    /// Per-match and per-candidate confidence floor.
    pub kappa_floor: f64,
    /// Blue-noise thinning radius in image space, pixels.
    pub thin_min_dist: f64,
    /// Candidate gates.
    pub theta_parallax_min: f64,
    pub reproj_max: f64,
    /// Per-keyframe seed budget.
    pub budget: usize,
    /// Opacity mapping endpoints.
    pub alpha_init_min: f64,
    pub alpha_init_max: f64,
    /// Axial-scale model constants.
    pub lambda_b: f64,
    pub lambda_r: f64,
    pub theta_floor: f64,
    /// Plane-fit radius = factor * median nearest-neighbour spacing.
    pub plane_radius_factor: f64,
}

impl Default for SeedingConfig {
    fn default() -> Self {
        Self {
            k_neighbours: 3,
            feature_stride: 4,
            patch_size: 7,
            search_radius_px: 24.0,
            w_sim: 0.5,
            w_fb: 0.3,
            w_epi: 0.2,
            sigma_fb: 1.0,
            sigma_epi: 1.0,
            gamma0: 0.3,
            gamma1: 0.8,
            epi_max: 2.0,
            fb_max: 2.0,
            kappa_floor: 0.2,
            thin_min_dist: 3.0,
            theta_parallax_min: 1.0f64.to_radians(),
            reproj_max: 1.5,
            budget: 1000,
            alpha_init_min: 0.1,
            alpha_init_max: 0.9,
            lambda_b: 0.05,
            lambda_r: 0.5,
            theta_floor: 2.0f64.to_radians(),
            plane_radius_factor: 5.0,
        }
    }
}

/// One pixel pair between the reference keyframe and a neighbour.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub ref_pixel: [f64; 2],
    /// Keyframe id of the neighbour view.
    pub neighbour_id: u64,
    pub target_pixel: [f64; 2],
    pub confidence: f64,
}

/// A triangulated seed candidate before Gaussian construction.
#[derive(Debug, Clone)]
pub struct SeedCandidate {
    pub ref_pixel: [f64; 2],
    pub point: Vector3<f64>,
    pub reproj_error: f64,
    pub baseline_angle: f64,
    pub kappa_bar: f64,
    /// Views with a conforming reprojection: (keyframe id, observed pixel).
    pub support: Vec<(u64, [f64; 2])>,
}

/// Blend of similarity, forward-backward and epipolar consistency, then the
/// piecewise-linear map to [0, 1].
pub fn match_confidence(sim: f64, fb_residual: f64, epi_distance: f64, cfg: &SeedingConfig) -> f64 {
    let raw = cfg.w_sim * sim
        + cfg.w_fb * (-fb_residual / cfg.sigma_fb).exp()
        + cfg.w_epi * (-epi_distance / cfg.sigma_epi).exp();
    ((raw - cfg.gamma0) / (cfg.gamma1 - cfg.gamma0)).clamp(0.0, 1.0)
}

/// Arithmetic mean of per-view confidences.
pub fn aggregate_confidence(per_view: &[f64]) -> Result<f64> {
    if per_view.is_empty() {
        return Err(SlamError::EmptyList);
    }
    Ok(per_view.iter().sum::<f64>() / per_view.len() as f64)
}

/// Fundamental matrix of the (reference, neighbour) view pair sharing one
/// intrinsic matrix. Errors when the baseline is (numerically) zero.
pub fn fundamental_matrix(
    cam: &PinholeCamera,
    pose_r: &SE3Pose,
    pose_n: &SE3Pose,
) -> Result<Matrix3<f64>> {
    let rel = pose_n.compose(&pose_r.inverse());
    let t = rel.translation;
    if t.norm() < 1e-12 {
        return Err(SlamError::DegenerateGeometry);
    }
    let e = geometry::skew(&t) * rel.rotation_matrix();
    let k = Matrix3::new(cam.fx, 0.0, cam.cx, 0.0, cam.fy, cam.cy, 0.0, 0.0, 1.0);
    let k_inv = k.try_inverse().expect("intrinsics are invertible");
    Ok(k_inv.transpose() * e * k_inv)
}

/// Symmetric epipolar distance: the larger of the two point-to-line
/// distances induced by the fundamental matrix.
pub fn symmetric_epipolar_distance(f: &Matrix3<f64>, x_r: &Vector2<f64>, x_n: &Vector2<f64>) -> f64 {
    let xr = Vector3::new(x_r.x, x_r.y, 1.0);
    let xn = Vector3::new(x_n.x, x_n.y, 1.0);
    let l_n = f * xr;
    let l_r = f.transpose() * xn;
    let val = xn.dot(&l_n).abs();
    let dn = (l_n.x * l_n.x + l_n.y * l_n.y).sqrt();
    let dr = (l_r.x * l_r.x + l_r.y * l_r.y).sqrt();
    if dn < 1e-15 || dr < 1e-15 {
        return f64::INFINITY;
    }
    (val / dn).max(val / dr)
}

/// Symmetric epipolar gate on a correspondence; zero-baseline pairs fail.
pub fn epipolar_filter(
    corr: &Correspondence,
    cam: &PinholeCamera,
    pose_r: &SE3Pose,
    pose_n: &SE3Pose,
    threshold: f64,
) -> bool {
    match fundamental_matrix(cam, pose_r, pose_n) {
        Ok(f) => {
            let d = symmetric_epipolar_distance(
                &f,
                &Vector2::new(corr.ref_pixel[0], corr.ref_pixel[1]),
                &Vector2::new(corr.target_pixel[0], corr.target_pixel[1]),
            );
            d <= threshold
        }
        Err(_) => false,
    }
}

/// Greedy dart-throwing in priority-descending order over 2D points:
/// a point is kept iff no already-kept point lies within `min_dist`.
/// Ties break by (y, x, index) so the result is deterministic.
/// Returns indices of kept points in kept order.
pub fn blue_noise_thin(points: &[[f64; 2]], priority: &[f64], min_dist: f64) -> Vec<usize> {
    assert!(min_dist > 0.0);
    assert_eq!(points.len(), priority.len());
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| {
        priority[b]
            .partial_cmp(&priority[a])
            .unwrap()
            .then(points[a][1].partial_cmp(&points[b][1]).unwrap())
            .then(points[a][0].partial_cmp(&points[b][0]).unwrap())
            .then(a.cmp(&b))
    });
    let d2 = min_dist * min_dist;
    let mut kept: Vec<usize> = Vec::new();
    for &i in &order {
        let p = points[i];
        let ok = kept.iter().all(|&j| {
            let q = points[j];
            (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) >= d2
        });
        if ok {
            kept.push(i);
        }
    }
    kept
}

/// Camera center of a 3x4 projection matrix.
fn projection_center(p: &Matrix3x4<f64>) -> Option<Vector3<f64>> {
    let m = p.fixed_view::<3, 3>(0, 0).into_owned();
    let c = -(m.try_inverse()?) * p.column(3);
    Some(Vector3::new(c.x, c.y, c.z))
}

/// Two-view linear triangulation: homogeneous least squares solved by SVD
/// (right singular vector of the smallest singular value), followed by
/// cheirality and quality checks. Returns the point, the larger of the two
/// reprojection distances, and the baseline angle subtended at the point.
pub fn triangulate_dlt(
    x_r: &Vector2<f64>,
    x_n: &Vector2<f64>,
    p_r: &Matrix3x4<f64>,
    p_n: &Matrix3x4<f64>,
) -> Result<(Vector3<f64>, f64, f64)> {
    let c_r = projection_center(p_r).ok_or(SlamError::DegenerateGeometry)?;
    let c_n = projection_center(p_n).ok_or(SlamError::DegenerateGeometry)?;
    if (c_r - c_n).norm() < 1e-9 {
        return Err(SlamError::DegenerateBaseline);
    }

    let mut a = Matrix4::zeros();
    a.set_row(0, &RowVector4::from(p_r.row(2) * x_r.x - p_r.row(0)));
    a.set_row(1, &RowVector4::from(p_r.row(2) * x_r.y - p_r.row(1)));
    a.set_row(2, &RowVector4::from(p_n.row(2) * x_n.x - p_n.row(0)));
    a.set_row(3, &RowVector4::from(p_n.row(2) * x_n.y - p_n.row(1)));

    let svd = a.svd(false, true);
    let v_t = svd.v_t.expect("svd requested v_t");
    // Singular values are ordered descending; the last row of V^T is the
    // right singular vector for the smallest one.
    let xh = v_t.row(3);
    let w = xh[3];
    if w.abs() < 1e-12 {
        return Err(SlamError::NearZeroHomogeneous { w });
    }
    let x = Vector3::new(xh[0] / w, xh[1] / w, xh[2] / w);

    let reproject = |p: &Matrix3x4<f64>, obs: &Vector2<f64>| -> Result<f64> {
        let h = p * nalgebra::Vector4::new(x.x, x.y, x.z, 1.0);
        if h.z <= geometry::Z_MIN {
            return Err(SlamError::CheiralityViolation);
        }
        Ok((Vector2::new(h.x / h.z, h.y / h.z) - obs).norm())
    };
    let e_r = reproject(p_r, x_r)?;
    let e_n = reproject(p_n, x_n)?;
    let reproj = e_r.max(e_n);

    let u = c_r - x;
    let v = c_n - x;
    let angle = u.normalize().dot(&v.normalize()).clamp(-1.0, 1.0).acos();
    Ok((x, reproj, angle))
}

/// Lowest reprojection error wins; ties break toward the larger baseline
/// angle. Returns the index of the selected hypothesis.
pub fn best_hypothesis(cands: &[(Vector3<f64>, f64, f64)]) -> Result<usize> {
    if cands.is_empty() {
        return Err(SlamError::EmptyList);
    }
    let mut best = 0usize;
    for i in 1..cands.len() {
        let (_, re_i, an_i) = cands[i];
        let (_, re_b, an_b) = cands[best];
        if re_i < re_b || (re_i == re_b && an_i > an_b) {
            best = i;
        }
    }
    Ok(best)
}

/// Orthonormal local frame `[t1 t2 v]` with `v` the smallest-eigenvalue
/// direction of the neighbour scatter (plane normal), sign toward
/// `toward`. Errors on fewer than three neighbours or (near-)collinear ones;
/// callers fall back to a ray-aligned frame.
pub fn local_frame(
    point: &Vector3<f64>,
    neighbours: &[Vector3<f64>],
    toward: &Vector3<f64>,
) -> Result<Matrix3<f64>> {
    if neighbours.len() < 3 {
        return Err(SlamError::DegenerateGeometry);
    }
    let mut centroid = Vector3::zeros();
    for n in neighbours {
        centroid += n;
    }
    centroid /= neighbours.len() as f64;
    let mut cov = Matrix3::zeros();
    for n in neighbours {
        let d = n - centroid;
        cov += d * d.transpose();
    }
    let eig = cov.symmetric_eigen();
    // Ascending sort of eigenpairs.
    let mut idx = [0usize, 1, 2];
    idx.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap());
    let lam_min = eig.eigenvalues[idx[0]].max(0.0);
    let lam_mid = eig.eigenvalues[idx[1]].max(0.0);
    let lam_max = eig.eigenvalues[idx[2]].max(0.0);
    if lam_max < 1e-18 || lam_mid < 1e-8 * lam_max {
        return Err(SlamError::DegenerateGeometry); // collinear neighbourhood
    }
    let mut v: Vector3<f64> = eig.eigenvectors.column(idx[0]).into_owned();
    let _ = lam_min;
    if v.dot(&(toward - point)) < 0.0 {
        v = -v;
    }
    Ok(frame_from_normal(&v))
}

/// Complete a unit normal into an orthonormal, right-handed `[t1 t2 v]`.
pub fn frame_from_normal(v: &Vector3<f64>) -> Matrix3<f64> {
    let v = v.normalize();
    // Pick the axis least aligned with v to build the first tangent.
    let axis = if v.x.abs() <= v.y.abs() && v.x.abs() <= v.z.abs() {
        Vector3::x()
    } else if v.y.abs() <= v.z.abs() {
        Vector3::y()
    } else {
        Vector3::z()
    };
    let t1 = (axis - v * v.dot(&axis)).normalize();
    let t2 = v.cross(&t1);
    Matrix3::from_columns(&[t1, t2, v])
}

/// Componentwise median (average of the two middle values for even counts).
fn median_rgb(samples: &[[f64; 3]]) -> [f64; 3] {
    let mut out = [0.0; 3];
    for c in 0..3 {
        let mut vals: Vec<f64> = samples.iter().map(|s| s[c]).collect();
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = vals.len();
        out[c] = if n % 2 == 1 { vals[n / 2] } else { 0.5 * (vals[n / 2 - 1] + vals[n / 2]) };
    }
    out
}

/// Build one Gaussian from a triangulated candidate: mean at the point,
/// covariance aligned with the local frame (`s_perp` from a one-pixel
/// back-projection at the reference view, `s_par` grown with small baselines
/// and large residuals), opacity from the aggregated confidence, and the
/// degree-0 color from the exposure-corrected per-view median.
pub fn init_gaussian(
    cand: &SeedCandidate,
    frame: &Matrix3<f64>,
    cam: &PinholeCamera,
    ref_pose: &SE3Pose,
    color_samples: &[[f64; 3]],
    cfg: &SeedingConfig,
    birth_kf: u64,
) -> GaussianSplat {
    let depth = geometry::transform_point(ref_pose, &cand.point).z.max(geometry::Z_MIN);
    let s_perp = depth / cam.fx;
    let s_par = s_perp
        * (1.0
            + cfg.lambda_b / cand.baseline_angle.max(cfg.theta_floor).tan()
            + cfg.lambda_r * cand.reproj_error);

    // The frame columns [t1 t2 v] are orthonormal; force det +1 so the
    // quaternion is a proper rotation.
    let mut u = *frame;
    if u.determinant() < 0.0 {
        u.set_column(0, &(-u.column(0)).into_owned());
    }
    let rot = nalgebra::UnitQuaternion::from_rotation_matrix(&nalgebra::Rotation3::from_matrix_unchecked(u));
    let q = rot.quaternion();

    let alpha = cfg.alpha_init_min + (cfg.alpha_init_max - cfg.alpha_init_min) * cand.kappa_bar;
    let mut g = GaussianSplat::new(
        cand.point,
        [q.w, q.i, q.j, q.k],
        Vector3::new(s_perp.ln(), s_perp.ln(), s_par.ln()),
        logit(alpha),
    );
    let med = median_rgb(color_samples);
    for c in 0..3 {
        g.sh[0][c] = med[c] / sh::SH_C0;
    }
    g.birth_kf = birth_kf;
    g
}

/// Greedy Poisson-disk subsampling over 3D positions in priority-descending
/// order. Returns indices of kept entries.
pub fn poisson_subsample_indices(
    positions: &[Vector3<f64>],
    priority: &[f64],
    radius: f64,
) -> Vec<usize> {
    assert!(radius >= 0.0);
    let mut order: Vec<usize> = (0..positions.len()).collect();
    order.sort_by(|&a, &b| {
        priority[b].partial_cmp(&priority[a]).unwrap().then(a.cmp(&b))
    });
    let r2 = radius * radius;
    let mut kept: Vec<usize> = Vec::new();
    for &i in &order {
        let ok = r2 == 0.0
            || kept.iter().all(|&j| (positions[i] - positions[j]).norm_squared() >= r2);
        if ok {
            kept.push(i);
        }
    }
    kept
}

/// Poisson-disk subsample a splat list by priority, keeping pairwise mean
/// distances at least `radius`.
pub fn poisson_subsample(splats: &[GaussianSplat], priority: &[f64], radius: f64) -> Vec<usize> {
    let positions: Vec<Vector3<f64>> = splats.iter().map(|g| g.mean_w).collect();
    poisson_subsample_indices(&positions, priority, radius)
}

/// Pick the Poisson radius by bisection so the kept count lands at (or just
/// under) the budget; radius zero when the candidate set is already within
/// budget.
fn budgeted_poisson(positions: &[Vector3<f64>], priority: &[f64], budget: usize) -> Vec<usize> {
    if positions.len() <= budget {
        return poisson_subsample_indices(positions, priority, 0.0);
    }
    let mut lo = 0.0f64;
    let (mut min_p, mut max_p) = (positions[0], positions[0]);
    for p in positions {
        min_p = min_p.inf(p);
        max_p = max_p.sup(p);
    }
    let mut hi = (max_p - min_p).norm().max(1e-6);
    let mut best = poisson_subsample_indices(positions, priority, hi);
    for _ in 0..32 {
        let mid = 0.5 * (lo + hi);
        let kept = poisson_subsample_indices(positions, priority, mid);
        if kept.len() > budget {
            lo = mid;
        } else {
            best = kept;
            hi = mid;
        }
    }
    best
}

/// Median nearest-neighbour spacing of a point cloud (O(n^2), desk scale).
fn median_nn_spacing(points: &[Vector3<f64>]) -> f64 {
    if points.len() < 2 {
        return 0.0;
    }
    let mut nn: Vec<f64> = Vec::with_capacity(points.len());
    for (i, p) in points.iter().enumerate() {
        let mut best = f64::INFINITY;
        for (j, q) in points.iter().enumerate() {
            if i != j {
                best = best.min((p - q).norm_squared());
            }
        }
        nn.push(best.sqrt());
    }
    nn.sort_by(|a, b| a.partial_cmp(b).unwrap());
    nn[nn.len() / 2]
}

/// Full one-shot seeding for a reference keyframe against its neighbours
/// using a dense matcher. Returns the inserted index range (possibly empty).
pub fn seed_keyframe(
    reference: &Keyframe,
    neighbours: &[&Keyframe],
    map: &mut SplatMap,
    matcher: &dyn DenseMatcher,
    cam: &PinholeCamera,
    cfg: &SeedingConfig,
    birth_kf: u64,
) -> Result<std::ops::Range<usize>> {
    let usable: Vec<&Keyframe> = neighbours
        .iter()
        .copied()
        .filter(|n| {
            (n.pose.camera_center() - reference.pose.camera_center()).norm() > 1e-9
        })
        .collect();
    if usable.is_empty() {
        return Err(SlamError::NoValidNeighbours);
    }

    // Dense matching + per-match confidence and hard gates.
    let mut correspondences: Vec<Correspondence> = Vec::new();
    let grid = &reference.descriptors;
    for n in &usable {
        let fwd = matcher.match_pair(grid, &n.descriptors);
        let bwd = matcher.match_pair(&n.descriptors, grid);
        let f = match fundamental_matrix(cam, &reference.pose, &n.pose) {
            Ok(f) => f,
            Err(_) => continue,
        };
        for cy in 0..grid.height {
            for cx in 0..grid.width {
                let cell = cy * grid.width + cx;
                if !fwd.valid[cell] {
                    continue;
                }
                let p = grid.cell_center(cx, cy);
                let u = fwd.displacement[cell];
                let q = [p[0] + u[0], p[1] + u[1]];
                if q[0] < 0.0
                    || q[1] < 0.0
                    || q[0] > (cam.width - 1) as f64
                    || q[1] > (cam.height - 1) as f64
                {
                    continue;
                }
                let fb = match bwd.sample_displacement(q[0], q[1]) {
                    Some(ub) => ((u[0] + ub[0]).powi(2) + (u[1] + ub[1]).powi(2)).sqrt(),
                    None => continue,
                };
                if fb > cfg.fb_max {
                    continue;
                }
                let epi = symmetric_epipolar_distance(
                    &f,
                    &Vector2::new(p[0], p[1]),
                    &Vector2::new(q[0], q[1]),
                );
                if epi > cfg.epi_max {
                    continue;
                }
                let kappa = match_confidence(fwd.similarity[cell], fb, epi, cfg);
                if kappa < cfg.kappa_floor {
                    continue;
                }
                correspondences.push(Correspondence {
                    ref_pixel: p,
                    neighbour_id: n.id,
                    target_pixel: q,
                    confidence: kappa,
                });
            }
        }
    }

    seed_from_correspondences(reference, &usable, map, &correspondences, cam, cfg, birth_kf)
}

/// Seeding pipeline from prepared correspondences (either the built-in
/// matcher output or an imported file from an external matcher): confidence
/// aggregation, thinning, trianulation with hypothesis selection, local
/// frames, Gaussian construction, and budgeted Poisson subsampling.
pub fn seed_from_correspondences(
    reference: &Keyframe,
    neighbours: &[&Keyframe],
    map: &mut SplatMap,
    correspondences: &[Correspondence],
    cam: &PinholeCamera,
    cfg: &SeedingConfig,
    birth_kf: u64,
) -> Result<std::ops::Range<usize>> {
    if neighbours.is_empty() {
        return Err(SlamError::NoValidNeighbours);
    }
    let n_views = neighbours.len() as f64;

    // Group per reference pixel (exact-position grouping; matcher output is
    // cell-aligned, imported files must align repeated pixels bit-exactly).
    let mut groups: Vec<([f64; 2], Vec<&Correspondence>)> = Vec::new();
    for corr in correspondences {
        match groups.iter_mut().find(|(p, _)| *p == corr.ref_pixel) {
            Some((_, list)) => list.push(corr),
            None => groups.push((corr.ref_pixel, vec![corr])),
        }
    }

    // Aggregate confidence over the full neighbour set (missing views count
    // as zero confidence).
    let mut pixels: Vec<[f64; 2]> = Vec::with_capacity(groups.len());
    let mut kappa_bars: Vec<f64> = Vec::with_capacity(groups.len());
    for (p, list) in &groups {
        pixels.push(*p);
        kappa_bars.push(list.iter().map(|c| c.confidence).sum::<f64>() / n_views);
    }

    // Blue-noise thinning in image space, highest aggregated confidence first.
    let kept = blue_noise_thin(&pixels, &kappa_bars, cfg.thin_min_dist);

    // Pairwise triangulation and hypothesis selection.
    let p_ref = cam.projection_matrix(&reference.pose);
    let proj: Vec<(u64, Matrix3x4<f64>)> =
        neighbours.iter().map(|n| (n.id, cam.projection_matrix(&n.pose))).collect();

    let mut candidates: Vec<SeedCandidate> = Vec::new();
    for &gi in &kept {
        let (pix, list) = &groups[gi];
        let kappa_bar = kappa_bars[gi];
        if kappa_bar < cfg.kappa_floor {
            continue;
        }
        let x_r = Vector2::new(pix[0], pix[1]);
        let mut hyps: Vec<(Vector3<f64>, f64, f64)> = Vec::new();
        for corr in list {
            let Some((_, p_n)) = proj.iter().find(|(id, _)| *id == corr.neighbour_id) else {
                continue;
            };
            let x_n = Vector2::new(corr.target_pixel[0], corr.target_pixel[1]);
            if let Ok(h) = triangulate_dlt(&x_r, &x_n, &p_ref, p_n) {
                hyps.push(h);
            }
        }
        let Ok(best) = best_hypothesis(&hyps) else { continue };
        let (point, reproj, angle) = hyps[best];
        if reproj > cfg.reproj_max || angle < cfg.theta_parallax_min {
            continue;
        }

        // Supporting views: every observation whose reprojection conforms.
        let mut support = vec![(reference.id, *pix)];
        for corr in list {
            let Some((_, p_n)) = proj.iter().find(|(id, _)| *id == corr.neighbour_id) else {
                continue;
            };
            let h = p_n * nalgebra::Vector4::new(point.x, point.y, point.z, 1.0);
            if h.z <= geometry::Z_MIN {
                continue;
            }
            let d = (Vector2::new(h.x / h.z, h.y / h.z)
                - Vector2::new(corr.target_pixel[0], corr.target_pixel[1]))
            .norm();
            if d <= cfg.reproj_max {
                support.push((corr.neighbour_id, corr.target_pixel));
            }
        }

        candidates.push(SeedCandidate {
            ref_pixel: *pix,
            point,
            reproj_error: reproj,
            baseline_angle: angle,
            kappa_bar,
            support,
        });
    }

    if candidates.is_empty() {
        return Ok(map.len()..map.len());
    }

    // Local frames from plane fits over neighbouring candidates.
    let points: Vec<Vector3<f64>> = candidates.iter().map(|c| c.point).collect();
    let radius = cfg.plane_radius_factor * median_nn_spacing(&points);
    let ref_center = reference.pose.camera_center();
    let mut frames: Vec<Matrix3<f64>> = Vec::with_capacity(candidates.len());
    for (i, c) in candidates.iter().enumerate() {
        let mut neigh: Vec<Vector3<f64>> = Vec::new();
        if radius > 0.0 {
            for (j, p) in points.iter().enumerate() {
                if j != i && (p - c.point).norm() <= radius {
                    neigh.push(*p);
                }
            }
        }
        let frame = local_frame(&c.point, &neigh, &ref_center).unwrap_or_else(|_| {
            // Ray-aligned fallback: normal along the viewing ray toward the
            // reference camera.
            frame_from_normal(&(ref_center - c.point).normalize())
        });
        frames.push(frame);
    }

    // Build Gaussians with exposure-corrected median colors.
    let view_of = |id: u64| -> Option<&Keyframe> {
        if id == reference.id {
            Some(reference)
        } else {
            neighbours.iter().copied().find(|n| n.id == id)
        }
    };
    let mut seeds: Vec<GaussianSplat> = Vec::with_capacity(candidates.len());
    let mut priorities: Vec<f64> = Vec::with_capacity(candidates.len());
    for (c, frame) in candidates.iter().zip(&frames) {
        let mut samples: Vec<[f64; 3]> = Vec::with_capacity(c.support.len());
        for (id, px) in &c.support {
            if let Some(kf) = view_of(*id) {
                let raw = kf.frame.rgb.sample_bilinear(px[0], px[1]);
                samples.push([
                    kf.exposure.unapply(raw[0]),
                    kf.exposure.unapply(raw[1]),
                    kf.exposure.unapply(raw[2]),
                ]);
            }
        }
        if samples.is_empty() {
            samples.push([0.5, 0.5, 0.5]);
        }
        seeds.push(init_gaussian(c, frame, cam, &reference.pose, &samples, cfg, birth_kf));
        priorities.push(c.kappa_bar);
    }

    // Budgeted Poisson-disk subsampling in world space.
    let positions: Vec<Vector3<f64>> = seeds.iter().map(|g| g.mean_w).collect();
    let mut kept = budgeted_poisson(&positions, &priorities, cfg.budget);
    kept.sort_unstable();
    let survivors: Vec<GaussianSplat> = kept.into_iter().map(|i| seeds[i].clone()).collect();

    if survivors.is_empty() {
        return Ok(map.len()..map.len());
    }
    Ok(map.insert(survivors))
}

/// Write correspondences in the plain-text exchange format:
/// `ref_x ref_y neighbour_id tgt_x tgt_y confidence`, one line per match.
pub fn write_correspondences(path: &Path, corrs: &[Correspondence]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for c in corrs {
        writeln!(
            f,
            "{:.6} {:.6} {} {:.6} {:.6} {:.6}",
            c.ref_pixel[0], c.ref_pixel[1], c.neighbour_id, c.target_pixel[0], c.target_pixel[1], c.confidence
        )?;
    }
    Ok(())
}

/// Parse the exchange format written by [`write_correspondences`].
pub fn read_correspondences(path: &Path) -> Result<Vec<Correspondence>> {
    let file = std::fs::File::open(path)?;
    let mut out = Vec::new();
    for (lineno, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = t.split_whitespace().collect();
        if fields.len() != 6 {
            return Err(SlamError::Dataset(format!(
                "{}:{}: expected 6 fields, got {}",
                path.display(),
                lineno + 1,
                fields.len()
            )));
        }
        let parse = |s: &str| -> Result<f64> {
            s.parse().map_err(|_| {
                SlamError::Dataset(format!("{}:{}: bad number {s:?}", path.display(), lineno + 1))
            })
        };
        out.push(Correspondence {
            ref_pixel: [parse(fields[0])?, parse(fields[1])?],
            neighbour_id: fields[2].parse().map_err(|_| {
                SlamError::Dataset(format!("{}:{}: bad id {:?}", path.display(), lineno + 1, fields[2]))
            })?,
            target_pixel: [parse(fields[3])?, parse(fields[4])?],
            confidence: parse(fields[5])?,
        });
    }
    Ok(out)
}

//! The Gaussian scene representation: per-splat parameters, covariance
//! reconstruction from the rotation + log-scale factorization, view-dependent
//! color, and maintenance bookkeeping.

use crate::error::{Result, SlamError};
use crate::sh;
use nalgebra::{Matrix3, Vector3};

/// Sigmoid, used for the opacity parameterization.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Inverse sigmoid; input clamped away from {0, 1}.
#[inline]
pub fn logit(p: f64) -> f64 {
    let p = p.clamp(1e-12, 1.0 - 1e-12);
    (p / (1.0 - p)).ln()
}

/// Rotation matrix of a quaternion `(w, x, y, z)`, normalized internally.
pub fn quat_to_rot(q: [f64; 4]) -> Matrix3<f64> {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    let (w, x, y, z) = (q[0] / n, q[1] / n, q[2] / n, q[3] / n);
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y),
        2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x),
        2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y),
    )
}

/// Derivative slices `dR/dq_k` for a *unit* quaternion `(w, x, y, z)`,
/// not including the normalization chain.
pub fn quat_rot_derivative(q: [f64; 4]) -> [Matrix3<f64>; 4] {
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    let dw = Matrix3::new(0.0, -z, y, z, 0.0, -x, -y, x, 0.0) * 2.0;
    let dx = Matrix3::new(0.0, y, z, y, -2.0 * x, -w, z, w, -2.0 * x) * 2.0;
    let dy = Matrix3::new(-2.0 * y, x, w, x, 0.0, z, -w, z, -2.0 * y) * 2.0;
    let dz = Matrix3::new(-2.0 * z, -w, x, w, -2.0 * z, y, x, y, 0.0) * 2.0;
    [dw, dx, dy, dz]
}

/// Backpropagate a rotation-matrix gradient to the raw quaternion storage,
/// including the normalization `q_hat = q / |q|`.
pub fn quat_gradient(q: [f64; 4], g_rot: &Matrix3<f64>) -> [f64; 4] {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    let qh = [q[0] / n, q[1] / n, q[2] / n, q[3] / n];
    let d = quat_rot_derivative(qh);
    let mut g_unit = [0.0; 4];
    for k in 0..4 {
        g_unit[k] = g_rot.component_mul(&d[k]).sum();
    }
    // Through normalization: (I - qh qh^T) / n.
    let dot: f64 = (0..4).map(|i| g_unit[i] * qh[i]).sum();
    let mut g = [0.0; 4];
    for k in 0..4 {
        g[k] = (g_unit[k] - dot * qh[k]) / n;
    }
    g
}

/// One anisotropic Gaussian primitive.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSplat {
    /// World-space mean, meters.
    pub mean_w: Vector3<f64>,
    /// Orientation quaternion `(w, x, y, z)`, kept unit-norm.
    pub rot: [f64; 4],
    /// Per-axis scales in log-space; covariance eigenvalues are `exp(2 l)`.
    pub log_scales: Vector3<f64>,
    /// Opacity stored as a logit so gradient steps cannot leave (0, 1).
    pub opacity_logit: f64,
    /// RGB spherical-harmonics coefficients, `sh[k][channel]`, degree <= 3.
    pub sh: [[f64; 3]; sh::MAX_COEFFS],
    /// Observation count.
    pub obs_count: u32,
    /// Cumulative visibility: summed composited weight over observations.
    pub visibility: f64,
    /// EMA of the screen-space footprint area (1-sigma ellipse), pixels^2.
    pub footprint_ema: f64,
    /// EMA anchor of the world mean.
    pub mean_ema: Vector3<f64>,
    /// Keyframe counter value at insertion; drives the prune grace period.
    pub birth_kf: u64,
}

impl GaussianSplat {
    pub fn new(mean_w: Vector3<f64>, rot: [f64; 4], log_scales: Vector3<f64>, opacity_logit: f64) -> Self {
        Self {
            mean_w,
            rot,
            log_scales,
            opacity_logit,
            sh: [[0.0; 3]; sh::MAX_COEFFS],
            obs_count: 0,
            visibility: 0.0,
            footprint_ema: 0.0,
            mean_ema: mean_w,
            birth_kf: 0,
        }
    }

    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit)
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        quat_to_rot(self.rot)
    }

    /// Renormalize the stored quaternion; call after every gradient update.
    pub fn renormalize_rot(&mut self) {
        let n = self.rot.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 0.0 {
            for v in &mut self.rot {
                *v /= n;
            }
        } else {
            self.rot = [1.0, 0.0, 0.0, 0.0];
        }
    }
}

/// World covariance `R diag(exp(2 l)) R^T`; symmetric positive definite by
/// construction of the factorization.
pub fn covariance_world(g: &GaussianSplat) -> Matrix3<f64> {
    let r = g.rotation_matrix();
    let d = Matrix3::from_diagonal(&Vector3::new(
        (2.0 * g.log_scales.x).exp(),
        (2.0 * g.log_scales.y).exp(),
        (2.0 * g.log_scales.z).exp(),
    ));
    r * d * r.transpose()
}

/// View-dependent color: per-channel dot product of the SH coefficients with
/// the real basis at `view_dir`. No clamping here; the rasterizer clamps.
pub fn eval_color(g: &GaussianSplat, degree: usize, view_dir: &Vector3<f64>) -> [f64; 3] {
    debug_assert!((view_dir.norm() - 1.0).abs() < 1e-6, "view_dir must be unit");
    let b = sh::basis(degree, [view_dir.x, view_dir.y, view_dir.z]);
    let mut out = [0.0; 3];
    for k in 0..sh::coeff_count(degree) {
        for c in 0..3 {
            out[c] += g.sh[k][c] * b[k];
        }
    }
    out
}

/// Growable splat collection with a generation counter bumped on every
/// structural change. Parameter updates do not bump the generation; renders
/// snapshot the generation so downstream consumers can detect staleness.
#[derive(Debug, Clone, Default)]
pub struct SplatMap {
    splats: Vec<GaussianSplat>,
    generation: u64,
}

impl SplatMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.splats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.splats.is_empty()
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn splats(&self) -> &[GaussianSplat] {
        &self.splats
    }

    /// Mutable access to parameters. Does not bump the generation: indices and
    /// count are unchanged by parameter updates.
    pub fn splats_mut(&mut self) -> &mut [GaussianSplat] {
        &mut self.splats
    }

    pub fn get(&self, index: usize) -> Option<&GaussianSplat> {
        self.splats.get(index)
    }

    /// Append splats; returns the index range they occupy.
    pub fn insert(&mut self, splats: Vec<GaussianSplat>) -> std::ops::Range<usize> {
        let start = self.splats.len();
        self.splats.extend(splats);
        self.generation += 1;
        start..self.splats.len()
    }

    /// Remove the given indices; survivors keep their relative order.
    pub fn remove(&mut self, indices: &[usize]) -> Result<()> {
        let len = self.splats.len();
        for &i in indices {
            if i >= len {
                return Err(SlamError::IndexOutOfRange { index: i, len });
            }
        }
        let mut drop = vec![false; len];
        for &i in indices {
            drop[i] = true;
        }
        let mut keep_iter = drop.iter();
        self.splats.retain(|_| !*keep_iter.next().unwrap());
        self.generation += 1;
        Ok(())
    }
}

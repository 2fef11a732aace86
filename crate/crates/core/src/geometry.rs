//! SE(3)/SO(3) algebra, pinhole projection, and the analytic Jacobians used by
//! tracking and rendering.
//!
//! Pose convention: world-to-camera, `x_cam = R x_world + t`. Pose increments
//! are applied left-multiplicatively, `T <- exp(xi^) T`, with the twist ordered
//! translation-first: `xi = (v, omega)`.

use crate::error::{Result, SlamError};
use nalgebra::{Matrix2x3, Matrix3, Matrix3x6, UnitQuaternion, Vector2, Vector3, Vector6};

/// Near-plane cull depth in meters. Splats at or behind this depth are
/// rejected before projection so the projection Jacobian stays bounded.
pub const Z_MIN: f64 = 1e-6;

/// Minimal 6-DoF rigid-motion increment: translational part `v`, rotational
/// part `omega` (radians, axis-angle).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Twist {
    pub v: Vector3<f64>,
    pub omega: Vector3<f64>,
}

impl Twist {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn from_vector(x: &Vector6<f64>) -> Self {
        Self { v: Vector3::new(x[0], x[1], x[2]), omega: Vector3::new(x[3], x[4], x[5]) }
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        Vector6::new(self.v.x, self.v.y, self.v.z, self.omega.x, self.omega.y, self.omega.z)
    }
}

/// World-to-camera rigid transform stored as unit quaternion + translation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SE3Pose {
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
}

impl Default for SE3Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl SE3Pose {
    pub fn identity() -> Self {
        Self { rotation: UnitQuaternion::identity(), translation: Vector3::zeros() }
    }

    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self { rotation, translation }
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    /// `self ∘ other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &SE3Pose) -> SE3Pose {
        SE3Pose {
            rotation: UnitQuaternion::new_normalize(
                (self.rotation * other.rotation).into_inner(),
            ),
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> SE3Pose {
        let rinv = self.rotation.inverse();
        SE3Pose { rotation: rinv, translation: -(rinv * self.translation) }
    }

    /// Camera center in world coordinates, `-R^T t`.
    pub fn camera_center(&self) -> Vector3<f64> {
        -(self.rotation.inverse() * self.translation)
    }

    /// Left-multiplicative twist update: `exp(xi^) ∘ self`.
    pub fn left_update(&self, xi: &Twist) -> SE3Pose {
        se3_exp(xi).compose(self)
    }

    /// Rotation angle of the relative rotation to `other`, radians.
    pub fn rotation_angle_to(&self, other: &SE3Pose) -> f64 {
        (self.rotation.inverse() * other.rotation).angle()
    }
}

#[inline]
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rodrigues exponential of a twist. Exact for all finite inputs, with series
/// fallbacks below `theta ~ 1e-4` to keep the coefficients well conditioned.
pub fn se3_exp(xi: &Twist) -> SE3Pose {
    let theta = xi.omega.norm();
    let wx = skew(&xi.omega);
    let wx2 = wx * wx;

    // (1 - cos t)/t^2 and (t - sin t)/t^3, with series below t ~ 1e-4.
    let (b, c) = if theta < 1e-4 {
        let t2 = theta * theta;
        (0.5 - t2 / 24.0 + t2 * t2 / 720.0, 1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0)
    } else {
        let t2 = theta * theta;
        ((1.0 - theta.cos()) / t2, (theta - theta.sin()) / (t2 * theta))
    };

    let v_m = Matrix3::identity() + wx * b + wx2 * c;
    let rotation = UnitQuaternion::from_scaled_axis(xi.omega);
    SE3Pose { rotation, translation: v_m * xi.v }
}

/// Logarithm map, inverse of [`se3_exp`] for rotation angles below pi.
pub fn se3_log(pose: &SE3Pose) -> Twist {
    let axis_angle = pose.rotation.scaled_axis();
    let theta = axis_angle.norm();
    let wx = skew(&axis_angle);
    let wx2 = wx * wx;

    // V^{-1} = I - wx/2 + k wx^2 with k = (1 - (theta/2) cot(theta/2)) / theta^2.
    let k = if theta < 1e-4 {
        1.0 / 12.0 + theta * theta / 720.0
    } else {
        let half = 0.5 * theta;
        (1.0 - half * half.cos() / half.sin()) / (theta * theta)
    };
    let v_inv = Matrix3::identity() - wx * 0.5 + wx2 * k;
    Twist { v: v_inv * pose.translation, omega: axis_angle }
}

/// `R x + t` — map a world point into the camera frame.
#[inline]
pub fn transform_point(pose: &SE3Pose, x: &Vector3<f64>) -> Vector3<f64> {
    pose.rotation * x + pose.translation
}

/// Calibrated pinhole intrinsics; pixel units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PinholeCamera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl PinholeCamera {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Self {
        assert!(fx > 0.0 && fy > 0.0, "focal lengths must be positive");
        assert!(width >= 1 && height >= 1, "image must be at least 1x1");
        Self { fx, fy, cx, cy, width, height }
    }

    /// 3x4 projection matrix `K [R | t]` of this camera at `pose`.
    pub fn projection_matrix(&self, pose: &SE3Pose) -> nalgebra::Matrix3x4<f64> {
        let k = Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0);
        let r = pose.rotation_matrix();
        let mut rt = nalgebra::Matrix3x4::zeros();
        rt.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
        rt.fixed_view_mut::<3, 1>(0, 3).copy_from(&pose.translation);
        k * rt
    }
}

/// Perspective projection of a camera-frame point to pixel coordinates.
pub fn project(cam: &PinholeCamera, mu_c: &Vector3<f64>) -> Result<Vector2<f64>> {
    if mu_c.z <= Z_MIN {
        return Err(SlamError::BehindCamera { z: mu_c.z, z_min: Z_MIN });
    }
    Ok(Vector2::new(cam.fx * mu_c.x / mu_c.z + cam.cx, cam.fy * mu_c.y / mu_c.z + cam.cy))
}

/// 2x3 Jacobian of [`project`] with respect to the camera-frame point.
pub fn projection_jacobian(cam: &PinholeCamera, mu_c: &Vector3<f64>) -> Result<Matrix2x3<f64>> {
    if mu_c.z <= Z_MIN {
        return Err(SlamError::BehindCamera { z: mu_c.z, z_min: Z_MIN });
    }
    let iz = 1.0 / mu_c.z;
    let iz2 = iz * iz;
    Ok(Matrix2x3::new(
        cam.fx * iz, 0.0, -cam.fx * mu_c.x * iz2,
        0.0, cam.fy * iz, -cam.fy * mu_c.y * iz2,
    ))
}

/// 3x6 Jacobian of the camera-frame point with respect to a left-multiplicative
/// twist: `[ I | -[mu_c]_x ]`.
pub fn point_pose_jacobian(mu_c: &Vector3<f64>) -> Matrix3x6<f64> {
    let mut j = Matrix3x6::zeros();
    j.fixed_view_mut::<3, 3>(0, 0).copy_from(&Matrix3::identity());
    j.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-skew(mu_c)));
    j
}

/// 2x6 Jacobian of the projected pixel with respect to the pose twist:
/// the projection Jacobian composed with [`point_pose_jacobian`].
pub fn pixel_pose_jacobian(
    cam: &PinholeCamera,
    mu_c: &Vector3<f64>,
) -> Result<nalgebra::Matrix2x6<f64>> {
    Ok(projection_jacobian(cam, mu_c)? * point_pose_jacobian(mu_c))
}

/// Derivative of the projection Jacobian entries with respect to the
/// camera-frame point. Returns the three 2x3 slices `dJ/dx, dJ/dy, dJ/dz`.
pub fn projection_jacobian_point_derivative(
    cam: &PinholeCamera,
    mu_c: &Vector3<f64>,
) -> Result<[Matrix2x3<f64>; 3]> {
    if mu_c.z <= Z_MIN {
        return Err(SlamError::BehindCamera { z: mu_c.z, z_min: Z_MIN });
    }
    let iz2 = 1.0 / (mu_c.z * mu_c.z);
    let iz3 = iz2 / mu_c.z;
    let d_dx = Matrix2x3::new(0.0, 0.0, -cam.fx * iz2, 0.0, 0.0, 0.0);
    let d_dy = Matrix2x3::new(0.0, 0.0, 0.0, 0.0, 0.0, -cam.fy * iz2);
    let d_dz = Matrix2x3::new(
        -cam.fx * iz2, 0.0, 2.0 * cam.fx * mu_c.x * iz3,
        0.0, -cam.fy * iz2, 2.0 * cam.fy * mu_c.y * iz3,
    );
    Ok([d_dx, d_dy, d_dz])
}

/// Screen-space covariance of a world-frame covariance seen from `pose`:
/// `Sigma_I = (J R) Sigma_W (J R)^T` with `J` the projection Jacobian at the
/// projected mean. No regularization is applied here.
pub fn screen_covariance(
    cam: &PinholeCamera,
    pose: &SE3Pose,
    mu_w: &Vector3<f64>,
    sigma_w: &Matrix3<f64>,
) -> Result<nalgebra::Matrix2<f64>> {
    let mu_c = transform_point(pose, mu_w);
    let j = projection_jacobian(cam, &mu_c)?;
    let w = j * pose.rotation_matrix();
    Ok(w * sigma_w * w.transpose())
}

/// Full chain-rule derivative of the screen covariance with respect to the
/// pose twist: both the projection-Jacobian branch (through the camera-frame
/// mean) and the rotation branch (`dR = [domega]_x R`). Returns the six 2x2
/// slices `dSigma_I/dxi_k`.
pub fn screen_cov_pose_jacobian(
    cam: &PinholeCamera,
    pose: &SE3Pose,
    mu_w: &Vector3<f64>,
    sigma_w: &Matrix3<f64>,
) -> Result<[nalgebra::Matrix2<f64>; 6]> {
    let r = pose.rotation_matrix();
    let mu_c = transform_point(pose, mu_w);
    let j = projection_jacobian(cam, &mu_c)?;
    let dj = projection_jacobian_point_derivative(cam, &mu_c)?;
    let dmu = point_pose_jacobian(&mu_c);
    let w = j * r;
    let sw = sigma_w;

    let mut out = [nalgebra::Matrix2::zeros(); 6];
    for k in 0..6 {
        // Branch through J(mu_c(xi)).
        let dmu_k = Vector3::new(dmu[(0, k)], dmu[(1, k)], dmu[(2, k)]);
        let dj_k = dj[0] * dmu_k.x + dj[1] * dmu_k.y + dj[2] * dmu_k.z;
        let mut dw = dj_k * r;
        // Rotation branch: dR = [e_w]_x R for the rotational coordinates.
        if k >= 3 {
            let mut e = Vector3::zeros();
            e[k - 3] = 1.0;
            dw += j * (skew(&e) * r);
        }
        let term = dw * sw * w.transpose();
        out[k] = term + term.transpose();
    }
    Ok(out)
}

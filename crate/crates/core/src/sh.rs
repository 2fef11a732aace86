//! Real spherical harmonics basis up to degree 3, plus analytic derivatives
//! with respect to the (unit) evaluation direction.
//!
//! Ordering follows the usual splatting convention:
//! `Y_0^0, Y_1^{-1}, Y_1^0, Y_1^1, Y_2^{-2}, Y_2^{-1}, Y_2^0, Y_2^1, Y_2^2, ...`

/// `Y_0^0 = 1 / (2 sqrt(pi))`.
pub const SH_C0: f64 = 0.282_094_791_773_878_14;
const C1: f64 = 0.488_602_511_902_919_92;
const C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];
const C3: [f64; 7] = [
    -0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    -0.457_045_799_464_465_74,
    0.373_176_332_590_115_4,
    -0.457_045_799_464_465_74,
    1.445_305_721_320_277,
    -0.590_043_589_926_643_5,
];

/// Number of coefficients for a given degree.
pub const fn coeff_count(degree: usize) -> usize {
    (degree + 1) * (degree + 1)
}

/// Maximum supported coefficient count (degree 3).
pub const MAX_COEFFS: usize = 16;

/// Evaluate the basis at a unit direction. Only the first
/// `coeff_count(degree)` entries are written; the rest stay zero.
pub fn basis(degree: usize, dir: [f64; 3]) -> [f64; MAX_COEFFS] {
    let [x, y, z] = dir;
    let mut b = [0.0; MAX_COEFFS];
    b[0] = SH_C0;
    if degree >= 1 {
        b[1] = -C1 * y;
        b[2] = C1 * z;
        b[3] = -C1 * x;
    }
    if degree >= 2 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        b[4] = C2[0] * x * y;
        b[5] = C2[1] * y * z;
        b[6] = C2[2] * (2.0 * zz - xx - yy);
        b[7] = C2[3] * x * z;
        b[8] = C2[4] * (xx - yy);
    }
    if degree >= 3 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        b[9] = C3[0] * y * (3.0 * xx - yy);
        b[10] = C3[1] * x * y * z;
        b[11] = C3[2] * y * (4.0 * zz - xx - yy);
        b[12] = C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy);
        b[13] = C3[4] * x * (4.0 * zz - xx - yy);
        b[14] = C3[5] * z * (xx - yy);
        b[15] = C3[6] * x * (xx - 3.0 * yy);
    }
    b
}

/// Gradient of each basis entry with respect to the direction components.
/// Returns `[dB/dx, dB/dy, dB/dz]`, each of length [`MAX_COEFFS`].
pub fn basis_gradient(degree: usize, dir: [f64; 3]) -> [[f64; MAX_COEFFS]; 3] {
    let [x, y, z] = dir;
    let mut gx = [0.0; MAX_COEFFS];
    let mut gy = [0.0; MAX_COEFFS];
    let mut gz = [0.0; MAX_COEFFS];
    if degree >= 1 {
        gy[1] = -C1;
        gz[2] = C1;
        gx[3] = -C1;
    }
    if degree >= 2 {
        gx[4] = C2[0] * y;
        gy[4] = C2[0] * x;
        gy[5] = C2[1] * z;
        gz[5] = C2[1] * y;
        gx[6] = C2[2] * (-2.0 * x);
        gy[6] = C2[2] * (-2.0 * y);
        gz[6] = C2[2] * 4.0 * z;
        gx[7] = C2[3] * z;
        gz[7] = C2[3] * x;
        gx[8] = C2[4] * 2.0 * x;
        gy[8] = C2[4] * (-2.0 * y);
    }
    if degree >= 3 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        gx[9] = C3[0] * 6.0 * x * y;
        gy[9] = C3[0] * (3.0 * xx - 3.0 * yy);
        gx[10] = C3[1] * y * z;
        gy[10] = C3[1] * x * z;
        gz[10] = C3[1] * x * y;
        gx[11] = C3[2] * (-2.0 * x * y);
        gy[11] = C3[2] * (4.0 * zz - xx - 3.0 * yy);
        gz[11] = C3[2] * 8.0 * y * z;
        gx[12] = C3[3] * (-6.0 * x * z);
        gy[12] = C3[3] * (-6.0 * y * z);
        gz[12] = C3[3] * (6.0 * zz - 3.0 * xx - 3.0 * yy);
        gx[13] = C3[4] * (4.0 * zz - 3.0 * xx - yy);
        gy[13] = C3[4] * (-2.0 * x * y);
        gz[13] = C3[4] * 8.0 * x * z;
        gx[14] = C3[5] * 2.0 * x * z;
        gy[14] = C3[5] * (-2.0 * y * z);
        gz[14] = C3[5] * (xx - yy);
        gx[15] = C3[6] * (3.0 * xx - 3.0 * yy);
        gy[15] = C3[6] * (-6.0 * x * y);
    }
    [gx, gy, gz]
}

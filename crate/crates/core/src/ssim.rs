//! Structural similarity with an 11x11 Gaussian window (sigma 1.5) and the
//! standard stabilizers, plus the analytic derivative with respect to the
//! first image.
//!
//! Local means and moments are Gaussian-filtered with border renormalization:
//! at each pixel the window weights are rescaled by the in-bounds mass, so
//! identical images score exactly 1 everywhere including the border. The
//! filter stays linear, which keeps the transpose (needed by the backward
//! pass) a zero-padded convolution of the Z-normalized field.

use crate::img::{ImageRgb, ScalarMap};

const WINDOW: usize = 11;
const SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

fn kernel_1d() -> [f64; WINDOW] {
    let mut k = [0.0; WINDOW];
    let c = (WINDOW / 2) as isize;
    let mut sum = 0.0;
    for (i, v) in k.iter_mut().enumerate() {
        let d = (i as isize - c) as f64;
        *v = (-0.5 * d * d / (SIGMA * SIGMA)).exp();
        sum += *v;
    }
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Separable zero-padded convolution with the symmetric window.
fn conv_zero(src: &ScalarMap, k: &[f64; WINDOW]) -> ScalarMap {
    let (w, h) = (src.width, src.height);
    let c = (WINDOW / 2) as isize;
    let mut tmp = ScalarMap::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, &kv) in k.iter().enumerate() {
                let xi = x as isize + i as isize - c;
                if xi >= 0 && (xi as usize) < w {
                    acc += kv * src.get(xi as usize, y);
                }
            }
            tmp.set(x, y, acc);
        }
    }
    let mut out = ScalarMap::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, &kv) in k.iter().enumerate() {
                let yi = y as isize + i as isize - c;
                if yi >= 0 && (yi as usize) < h {
                    acc += kv * tmp.get(x, yi as usize);
                }
            }
            out.set(x, y, acc);
        }
    }
    out
}

/// In-bounds kernel mass per pixel; separable product of the axis masses.
fn border_mass(w: usize, h: usize, k: &[f64; WINDOW]) -> ScalarMap {
    let c = (WINDOW / 2) as isize;
    let axis_mass = |n: usize| -> Vec<f64> {
        (0..n)
            .map(|x| {
                k.iter()
                    .enumerate()
                    .filter(|(i, _)| {
                        let xi = x as isize + *i as isize - c;
                        xi >= 0 && (xi as usize) < n
                    })
                    .map(|(_, &kv)| kv)
                    .sum()
            })
            .collect()
    };
    let mx = axis_mass(w);
    let my = axis_mass(h);
    let mut out = ScalarMap::new(w, h);
    for y in 0..h {
        for x in 0..w {
            out.set(x, y, mx[x] * my[y]);
        }
    }
    out
}

fn channel(img: &ImageRgb, ch: usize) -> ScalarMap {
    let mut out = ScalarMap::new(img.width, img.height);
    for (i, px) in img.data.chunks_exact(3).enumerate() {
        out.data[i] = px[ch];
    }
    out
}

struct Filter {
    k: [f64; WINDOW],
    z: ScalarMap,
}

impl Filter {
    fn new(w: usize, h: usize) -> Self {
        let k = kernel_1d();
        let z = border_mass(w, h, &k);
        Self { k, z }
    }

    fn apply(&self, src: &ScalarMap) -> ScalarMap {
        let mut out = conv_zero(src, &self.k);
        for (o, z) in out.data.iter_mut().zip(&self.z.data) {
            *o /= z;
        }
        out
    }

    /// Transpose of `apply`: convolve the Z-normalized field.
    fn apply_transpose(&self, g: &ScalarMap) -> ScalarMap {
        let mut t = g.clone();
        for (v, z) in t.data.iter_mut().zip(&self.z.data) {
            *v /= z;
        }
        conv_zero(&t, &self.k)
    }
}

/// Mean SSIM over pixels and channels; both images must share dimensions.
pub fn ssim(a: &ImageRgb, b: &ImageRgb) -> f64 {
    assert!(a.same_dims(b), "ssim inputs must share dimensions");
    ssim_impl(a, b, None).0
}

/// Mean SSIM and the gradient of `upstream * ssim` with respect to `a`.
pub fn ssim_with_grad(a: &ImageRgb, b: &ImageRgb, upstream: f64) -> (f64, ImageRgb) {
    assert!(a.same_dims(b), "ssim inputs must share dimensions");
    let (v, g) = ssim_impl(a, b, Some(upstream));
    (v, g.unwrap())
}

fn ssim_impl(a: &ImageRgb, b: &ImageRgb, upstream: Option<f64>) -> (f64, Option<ImageRgb>) {
    let (w, h) = (a.width, a.height);
    let filter = Filter::new(w, h);
    let n = (w * h) as f64;
    let mut total = 0.0;
    let mut grad = upstream.map(|_| ImageRgb::new(w, h));

    for ch in 0..3 {
        let x = channel(a, ch);
        let y = channel(b, ch);
        let mu_x = filter.apply(&x);
        let mu_y = filter.apply(&y);
        let xx = ScalarMap { width: w, height: h, data: x.data.iter().map(|v| v * v).collect() };
        let xy = ScalarMap {
            width: w,
            height: h,
            data: x.data.iter().zip(&y.data).map(|(p, q)| p * q).collect(),
        };
        let yy = ScalarMap { width: w, height: h, data: y.data.iter().map(|v| v * v).collect() };
        let s_xx = filter.apply(&xx);
        let s_xy = filter.apply(&xy);
        let s_yy = filter.apply(&yy);

        let mut g_mu_x = ScalarMap::new(w, h);
        let mut g_s_xx = ScalarMap::new(w, h);
        let mut g_s_xy = ScalarMap::new(w, h);

        for i in 0..w * h {
            let (mx, my) = (mu_x.data[i], mu_y.data[i]);
            let var_x = s_xx.data[i] - mx * mx;
            let var_y = s_yy.data[i] - my * my;
            let cov = s_xy.data[i] - mx * my;
            let a1 = 2.0 * mx * my + C1;
            let a2 = 2.0 * cov + C2;
            let b1 = mx * mx + my * my + C1;
            let b2 = var_x + var_y + C2;
            let s = (a1 * a2) / (b1 * b2);
            total += s;

            if upstream.is_some() {
                let u = 1.0 / (3.0 * n);
                let d_a1 = a2 / (b1 * b2);
                let d_a2 = a1 / (b1 * b2);
                let d_b1 = -s / b1;
                let d_b2 = -s / b2;
                g_mu_x.data[i] = u
                    * (d_a1 * 2.0 * my + d_b1 * 2.0 * mx + d_a2 * (-2.0 * my) + d_b2 * (-2.0 * mx));
                g_s_xx.data[i] = u * d_b2;
                g_s_xy.data[i] = u * 2.0 * d_a2;
            }
        }

        if let (Some(up), Some(gimg)) = (upstream, grad.as_mut()) {
            let t_mu = filter.apply_transpose(&g_mu_x);
            let t_xx = filter.apply_transpose(&g_s_xx);
            let t_xy = filter.apply_transpose(&g_s_xy);
            for i in 0..w * h {
                let gx = t_mu.data[i] + t_xx.data[i] * 2.0 * x.data[i] + t_xy.data[i] * y.data[i];
                gimg.data[3 * i + ch] = up * gx;
            }
        }
    }

    (total / (3.0 * n), grad)
}

//! Per-frame camera pose estimation: robust weighted photometric loss with
//! affine exposure compensation, minimized by Adam steps on a left-
//! multiplicative twist.

use crate::error::{Result, SlamError};
use crate::geometry::{PinholeCamera, SE3Pose, Twist};
use crate::img::{ImageRgb, ScalarMap};
use crate::optim::{clip_grad_norm, cosine_lr, Adam};
use crate::render::{self, RenderConfig, RenderOutput};
use crate::splatmap::SplatMap;

/// An observed frame plus its precomputed luminance-gradient magnitude.
#[derive(Debug, Clone)]
pub struct Frame {
    pub rgb: ImageRgb,
    pub timestamp: f64,
    pub grad_mag: ScalarMap,
}

impl Frame {
    pub fn new(rgb: ImageRgb, timestamp: f64) -> Self {
        let grad_mag = rgb.gradient_magnitude();
        Self { rgb, timestamp, grad_mag }
    }
}

/// Affine brightness model: corrected = gain * rendered + bias.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Exposure {
    pub gain: f64,
    pub bias: f64,
}

impl Default for Exposure {
    fn default() -> Self {
        Self { gain: 1.0, bias: 0.0 }
    }
}

impl Exposure {
    pub fn identity() -> Self {
        Self::default()
    }

    #[inline]
    pub fn apply(&self, v: f64) -> f64 {
        self.gain * v + self.bias
    }

    /// Map an observed intensity back into render space.
    #[inline]
    pub fn unapply(&self, v: f64) -> f64 {
        (v - self.bias) / self.gain
    }
}

/// Tracking configuration.
#[derive(Debug, Clone, Copy)]
pub struct TrackConfig {
    /// Gradient steps per frame.
    pub iters: usize,
    /// Base Adam learning rate on the twist, cosine-decayed over the steps.
    pub lr: f64,
    /// Opacity weight threshold: full weight at accumulated opacity >= tau.
    pub tau_alpha: f64,
    /// Image-gradient weight threshold.
    pub tau_grad: f64,
    /// Robust penalty scale, intensity units.
    pub huber_delta: f64,
    /// Exposure gain clamp range.
    pub gain_min: f64,
    pub gain_max: f64,
    /// Global-norm clip applied to the twist gradient.
    pub grad_clip: f64,
}

impl Default for TrackConfig {
    fn default() -> Self {
        Self {
            iters: 30,
            lr: 5e-3,
            tau_alpha: 0.5,
            tau_grad: 0.02,
            huber_delta: 0.1,
            gain_min: 0.1,
            gain_max: 10.0,
            grad_clip: 1.0,
        }
    }
}

#[inline]
pub(crate) fn huber(r: f64, delta: f64) -> f64 {
    let a = r.abs();
    if a <= delta {
        0.5 * r * r
    } else {
        delta * (a - 0.5 * delta)
    }
}

#[inline]
pub(crate) fn huber_deriv(r: f64, delta: f64) -> f64 {
    if r.abs() <= delta {
        r
    } else {
        delta * r.signum()
    }
}

/// Closed-form least-squares fit of gain and bias of observed on rendered
/// over the masked pixels (all channels pooled). Degenerate systems (fewer
/// than two masked pixels, or rendered variance below 1e-12) fall back to the
/// identity exposure. The gain is clamped to the configured range and the
/// bias re-solved for the clamped gain.
pub fn fit_exposure(
    observed: &ImageRgb,
    rendered: &ImageRgb,
    mask: &[bool],
    cfg: &TrackConfig,
) -> Exposure {
    debug_assert_eq!(mask.len(), rendered.width * rendered.height);
    let mut n = 0.0f64;
    let mut sx = 0.0;
    let mut sy = 0.0;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (i, &m) in mask.iter().enumerate() {
        if !m {
            continue;
        }
        for c in 0..3 {
            let x = rendered.data[3 * i + c];
            let y = observed.data[3 * i + c];
            n += 1.0;
            sx += x;
            sy += y;
            sxx += x * x;
            sxy += x * y;
        }
    }
    if n < 6.0 {
        return Exposure::identity();
    }
    let var = sxx / n - (sx / n) * (sx / n);
    if var < 1e-12 {
        return Exposure::identity();
    }
    let det = sxx * n - sx * sx;
    let mut gain = (sxy * n - sx * sy) / det;
    gain = gain.clamp(cfg.gain_min, cfg.gain_max);
    let bias = (sy - gain * sx) / n;
    Exposure { gain, bias }
}

/// Per-pixel confidence weights: opacity term times image-gradient term,
/// each clipped to [0, 1].
pub fn pixel_weights(frame: &Frame, output: &RenderOutput, cfg: &TrackConfig) -> ScalarMap {
    let mut w = ScalarMap::new(frame.rgb.width, frame.rgb.height);
    for i in 0..w.data.len() {
        let wa = (output.accum_opacity.data[i] / cfg.tau_alpha).clamp(0.0, 1.0);
        let wg = (frame.grad_mag.data[i] / cfg.tau_grad).clamp(0.0, 1.0);
        w.data[i] = wa * wg;
    }
    w
}

/// Weighted robust photometric loss and its gradient with respect to the
/// pose twist. The exposure is treated as a fixed parameter here; callers
/// refit it between evaluations. The gradient includes the dependence of the
/// opacity weight on the accumulated opacity.
pub fn tracking_loss(
    frame: &Frame,
    map: &SplatMap,
    pose: &SE3Pose,
    cam: &PinholeCamera,
    exposure: &Exposure,
    cfg: &TrackConfig,
    rcfg: &RenderConfig,
    background: [f64; 3],
) -> Result<(f64, Twist)> {
    if map.is_empty() {
        return Err(SlamError::EmptyMap);
    }
    let (screen, out) = render::render_map(map, pose, cam, background, rcfg);
    let (loss, d_color, d_accum) = photometric_residual_grads(frame, &out, exposure, cfg);
    let grads =
        render::render_backward(map, &screen, pose, cam, &out, &d_color, Some(&d_accum), rcfg)?;
    Ok((loss, grads.d_pose))
}

/// Shared between tracking and mapping: the weighted Huber photometric term,
/// its gradient image with respect to the rendered colors, and the gradient
/// map with respect to the accumulated opacity (from the opacity weight).
pub(crate) fn photometric_residual_grads(
    frame: &Frame,
    out: &RenderOutput,
    exposure: &Exposure,
    cfg: &TrackConfig,
) -> (f64, ImageRgb, ScalarMap) {
    let (w, h) = (frame.rgb.width, frame.rgb.height);
    let inv_n = 1.0 / (w * h) as f64;
    let mut loss = 0.0;
    let mut d_color = ImageRgb::new(w, h);
    let mut d_accum = ScalarMap::new(w, h);
    for i in 0..w * h {
        let alpha_hat = out.accum_opacity.data[i];
        let wa = (alpha_hat / cfg.tau_alpha).clamp(0.0, 1.0);
        let wg = (frame.grad_mag.data[i] / cfg.tau_grad).clamp(0.0, 1.0);
        let weight = wa * wg;
        let mut rho_sum = 0.0;
        for c in 0..3 {
            let r = exposure.apply(out.color.data[3 * i + c]) - frame.rgb.data[3 * i + c];
            rho_sum += huber(r, cfg.huber_delta);
            d_color.data[3 * i + c] =
                inv_n * weight * huber_deriv(r, cfg.huber_delta) * exposure.gain;
        }
        loss += weight * rho_sum;
        if alpha_hat > 0.0 && alpha_hat < cfg.tau_alpha {
            d_accum.data[i] = inv_n * rho_sum * wg / cfg.tau_alpha;
        }
    }
    (loss * inv_n, d_color, d_accum)
}

/// Result of tracking one frame.
#[derive(Debug, Clone)]
pub struct TrackResult {
    pub pose: SE3Pose,
    pub exposure: Exposure,
    pub loss: f64,
    /// Set when the loss grew by more than 10x from its running minimum.
    pub diverged: bool,
    pub iters_run: usize,
}

/// Track one frame: alternate an exposure refit and one Adam step on the
/// twist with cosine-decayed learning rate, applying each step
/// left-multiplicatively. Returns the pose with the lowest observed loss.
pub fn track_frame(
    frame: &Frame,
    map: &SplatMap,
    t_init: &SE3Pose,
    cam: &PinholeCamera,
    cfg: &TrackConfig,
    rcfg: &RenderConfig,
    background: [f64; 3],
) -> Result<TrackResult> {
    if map.is_empty() {
        return Err(SlamError::EmptyMap);
    }

    let mut pose = *t_init;
    let mut adam = Adam::new(6);
    let mut best_pose = pose;
    let mut best_exposure = Exposure::identity();
    let mut best_loss = f64::INFINITY;
    let mut diverged = false;
    let mut iters_run = 0;

    // One evaluation per iteration plus a final one so the last step's pose
    // competes for best-so-far.
    for k in 0..=cfg.iters {
        let (screen, out) = render::render_map(map, &pose, cam, background, rcfg);
        let mask: Vec<bool> =
            out.accum_opacity.data.iter().map(|&a| a >= cfg.tau_alpha).collect();
        let exposure = fit_exposure(&frame.rgb, &out.color, &mask, cfg);
        let (loss, d_color, d_accum) = photometric_residual_grads(frame, &out, &exposure, cfg);

        if loss < best_loss {
            best_loss = loss;
            best_pose = pose;
            best_exposure = exposure;
        } else if loss > 10.0 * best_loss && best_loss.is_finite() {
            diverged = true;
            break;
        }
        if k == cfg.iters {
            break;
        }

        let grads = render::render_backward(
            map, &screen, &pose, cam, &out, &d_color, Some(&d_accum), rcfg,
        )?;
        let mut g = [0.0f64; 6];
        let gv = grads.d_pose.to_vector();
        g.copy_from_slice(gv.as_slice());
        clip_grad_norm(&mut g, cfg.grad_clip);
        let lr = cosine_lr(cfg.lr, k, cfg.iters);
        let delta = adam.step(&g, lr);
        let xi = Twist::from_vector(&nalgebra::Vector6::from_row_slice(&delta));
        pose = pose.left_update(&xi);
        iters_run += 1;
    }

    Ok(TrackResult { pose: best_pose, exposure: best_exposure, loss: best_loss, diverged, iters_run })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::splatmap::{logit, GaussianSplat};
    use nalgebra::Vector3;

    fn small_scene() -> (SplatMap, PinholeCamera) {
        let mut map = SplatMap::new();
        let mut splats = Vec::new();
        for i in 0..5 {
            let f = i as f64;
            let mut g = GaussianSplat::new(
                Vector3::new((f - 2.0) * 0.12, (f * 0.618).sin() * 0.1, 1.0 + 0.15 * f),
                [1.0, 0.0, 0.0, 0.0],
                Vector3::from_element((0.08f64).ln()),
                logit(0.8),
            );
            g.sh[0] = [
                (0.4 + 0.1 * f) / crate::sh::SH_C0,
                (0.8 - 0.1 * f) / crate::sh::SH_C0,
                0.5 / crate::sh::SH_C0,
            ];
            splats.push(g);
        }
        map.insert(splats);
        (map, PinholeCamera::new(24.0, 24.0, 7.5, 7.5, 16, 16))
    }

    #[test]
    fn exposure_fit_recovers_identity_and_affine_models() {
        let cfg = TrackConfig::default();
        let mut rendered = ImageRgb::new(8, 8);
        for (i, v) in rendered.data.iter_mut().enumerate() {
            *v = ((i as f64) * 0.071).sin().abs();
        }
        let mask = vec![true; 64];

        let e = fit_exposure(&rendered.clone(), &rendered, &mask, &cfg);
        assert!((e.gain - 1.0).abs() < 1e-12 && e.bias.abs() < 1e-12);

        let mut obs = rendered.clone();
        for v in obs.data.iter_mut() {
            *v = 2.0 * *v + 0.1;
        }
        let e = fit_exposure(&obs, &rendered, &mask, &cfg);
        assert!((e.gain - 2.0).abs() < 1e-10, "gain {}", e.gain);
        assert!((e.bias - 0.1).abs() < 1e-10, "bias {}", e.bias);
    }

    #[test]
    fn constant_render_degenerates_to_identity_exposure() {
        let cfg = TrackConfig::default();
        let rendered = ImageRgb::filled(8, 8, [0.5, 0.5, 0.5]);
        let obs = ImageRgb::filled(8, 8, [0.9, 0.9, 0.9]);
        let e = fit_exposure(&obs, &rendered, &vec![true; 64], &cfg);
        assert_eq!(e, Exposure::identity());
    }

    #[test]
    fn exposure_fit_is_scale_consistent() {
        let cfg = TrackConfig::default();
        let mut rendered = ImageRgb::new(8, 8);
        for (i, v) in rendered.data.iter_mut().enumerate() {
            *v = 0.1 + 0.8 * (((i * 13) % 64) as f64 / 64.0);
        }
        let mut obs = rendered.clone();
        for v in obs.data.iter_mut() {
            *v = 1.3 * *v + 0.05;
        }
        let mask = vec![true; 64];
        let base = fit_exposure(&obs, &rendered, &mask, &cfg);
        for s in [0.5, 0.8, 1.7, 2.0] {
            let mut scaled = obs.clone();
            for v in scaled.data.iter_mut() {
                *v *= s;
            }
            let e = fit_exposure(&scaled, &rendered, &mask, &cfg);
            assert!((e.gain - s * base.gain).abs() < 1e-10);
            assert!((e.bias - s * base.bias).abs() < 1e-10);
        }
    }

    #[test]
    fn pixel_weights_clip_and_multiply() {
        let cfg = TrackConfig::default();
        let mut rgb = ImageRgb::new(4, 1);
        // Strong horizontal ramp so every pixel saturates the gradient term.
        for x in 0..4 {
            rgb.set_pixel(x, 0, [x as f64 * 0.3; 3]);
        }
        let frame = Frame::new(rgb, 0.0);
        let mut out_accum = ScalarMap::new(4, 1);
        out_accum.data = vec![0.0, cfg.tau_alpha / 2.0, cfg.tau_alpha, 1.0];
        let out = RenderOutput {
            color: ImageRgb::new(4, 1),
            accum_opacity: out_accum,
            offsets: vec![0; 5],
            contribs: vec![],
            weights: vec![],
            footprints: vec![],
            generation: 0,
            background: [0.0; 3],
        };
        let w = pixel_weights(&frame, &out, &cfg);
        assert_eq!(w.data[0], 0.0);
        assert!((w.data[1] - 0.5).abs() < 1e-12);
        assert!((w.data[2] - 1.0).abs() < 1e-12);
        assert!((w.data[3] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn quarter_weight_when_both_terms_at_half_threshold() {
        let cfg = TrackConfig::default();
        // Build a frame whose gradient magnitude is exactly tau_grad / 2 at
        // the probe pixel: luminance ramp with slope tau_grad/2 along x.
        let mut rgb = ImageRgb::new(5, 3);
        for y in 0..3 {
            for x in 0..5 {
                let v = x as f64 * cfg.tau_grad / 2.0;
                rgb.set_pixel(x, y, [v, v, v]);
            }
        }
        let frame = Frame::new(rgb, 0.0);
        let mut accum = ScalarMap::new(5, 3);
        accum.data.iter_mut().for_each(|a| *a = cfg.tau_alpha / 2.0);
        let out = RenderOutput {
            color: ImageRgb::new(5, 3),
            accum_opacity: accum,
            offsets: vec![0; 16],
            contribs: vec![],
            weights: vec![],
            footprints: vec![],
            generation: 0,
            background: [0.0; 3],
        };
        let w = pixel_weights(&frame, &out, &cfg);
        assert!((w.get(2, 1) - 0.25).abs() < 1e-12, "weight {}", w.get(2, 1));
    }

    #[test]
    fn loss_is_zero_when_render_matches_observation() {
        let (map, cam) = small_scene();
        let cfg = TrackConfig::default();
        let rcfg = RenderConfig::default();
        let pose = SE3Pose::identity();
        let (_, out) = render::render_map(&map, &pose, &cam, [0.0; 3], &rcfg);
        let frame = Frame::new(out.color.clone(), 0.0);
        let (loss, g) =
            tracking_loss(&frame, &map, &pose, &cam, &Exposure::identity(), &cfg, &rcfg, [0.0; 3])
                .unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(g.to_vector().norm(), 0.0);
    }

    #[test]
    fn constant_offset_is_absorbed_by_the_exposure_bias() {
        let (map, cam) = small_scene();
        let cfg = TrackConfig::default();
        let rcfg = RenderConfig::default();
        let pose = SE3Pose::identity();
        let (_, out) = render::render_map(&map, &pose, &cam, [0.0; 3], &rcfg);
        let mut shifted = out.color.clone();
        for v in shifted.data.iter_mut() {
            *v += 0.07;
        }
        let frame = Frame::new(shifted, 0.0);
        let mask: Vec<bool> = out.accum_opacity.data.iter().map(|&a| a >= cfg.tau_alpha).collect();
        let exposure = fit_exposure(&frame.rgb, &out.color, &mask, &cfg);
        let (loss, _) =
            tracking_loss(&frame, &map, &pose, &cam, &exposure, &cfg, &rcfg, [0.0; 3]).unwrap();
        // The bias absorbs the shift on well-covered pixels; the weighted loss
        // collapses to (numerically) zero.
        assert!(loss < 1e-8, "loss {loss}");
    }

    #[test]
    fn empty_map_is_an_error_and_zero_iters_returns_t_init() {
        let cfg = TrackConfig::default();
        let rcfg = RenderConfig::default();
        let cam = PinholeCamera::new(24.0, 24.0, 7.5, 7.5, 16, 16);
        let frame = Frame::new(ImageRgb::new(16, 16), 0.0);
        let empty = SplatMap::new();
        assert!(matches!(
            track_frame(&frame, &empty, &SE3Pose::identity(), &cam, &cfg, &rcfg, [0.0; 3]),
            Err(SlamError::EmptyMap)
        ));

        let (map, cam) = small_scene();
        let (_, out) = render::render_map(&map, &SE3Pose::identity(), &cam, [0.0; 3], &rcfg);
        let frame = Frame::new(out.color.clone(), 0.0);
        let mut zero_cfg = cfg;
        zero_cfg.iters = 0;
        let init = SE3Pose::identity();
        let res = track_frame(&frame, &map, &init, &cam, &zero_cfg, &rcfg, [0.0; 3]).unwrap();
        assert_eq!(res.pose, init);
        assert_eq!(res.iters_run, 0);
    }
}

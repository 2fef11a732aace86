//! Dense correspondence: descriptor grids at feature resolution, the matcher
//! interface, and a patch-correlation reference matcher.
//!
//! The reference matcher builds one descriptor per grid cell from the
//! mean-removed, l2-normalized patch of downsampled luminance around it, so
//! descriptor dot products are exactly normalized cross-correlation scores.
//! Any learned matcher can replace it behind [`DenseMatcher`] or through the
//! correspondence import format in the seeding module.

use crate::img::ImageRgb;

/// L2-normalized descriptors on a regular grid at `stride`-pixel resolution.
#[derive(Debug, Clone, Default)]
pub struct DescriptorGrid {
    pub stride: usize,
    pub width: usize,
    pub height: usize,
    pub dim: usize,
    /// `data[(cy * width + cx) * dim ..][..dim]`, zero for invalid cells.
    pub data: Vec<f64>,
    pub valid: Vec<bool>,
}

impl DescriptorGrid {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Full-resolution pixel position of a cell center.
    #[inline]
    pub fn cell_center(&self, cx: usize, cy: usize) -> [f64; 2] {
        let half = (self.stride as f64 - 1.0) / 2.0;
        [cx as f64 * self.stride as f64 + half, cy as f64 * self.stride as f64 + half]
    }

    #[inline]
    pub fn descriptor(&self, cx: usize, cy: usize) -> &[f64] {
        let i = (cy * self.width + cx) * self.dim;
        &self.data[i..i + self.dim]
    }

    #[inline]
    pub fn is_valid(&self, cx: usize, cy: usize) -> bool {
        self.valid[cy * self.width + cx]
    }

    /// Build the patch-correlation descriptor grid: downsample luminance by
    /// `stride` (block mean), then take the `patch x patch` neighbourhood of
    /// each cell (edge-clamped), remove its mean, and l2-normalize. Cells
    /// whose patch is (numerically) constant are marked invalid.
    pub fn compute(img: &ImageRgb, stride: usize, patch: usize) -> Self {
        assert!(stride >= 1 && patch >= 1 && patch % 2 == 1);
        let gw = img.width / stride;
        let gh = img.height / stride;
        assert!(gw > 0 && gh > 0, "image smaller than one feature cell");

        // Block-mean downsampled luminance.
        let mut lum = vec![0.0f64; gw * gh];
        for cy in 0..gh {
            for cx in 0..gw {
                let mut acc = 0.0;
                for dy in 0..stride {
                    for dx in 0..stride {
                        let p = img.pixel(cx * stride + dx, cy * stride + dy);
                        acc += (p[0] + p[1] + p[2]) / 3.0;
                    }
                }
                lum[cy * gw + cx] = acc / (stride * stride) as f64;
            }
        }

        let dim = patch * patch;
        let half = (patch / 2) as isize;
        let mut data = vec![0.0f64; gw * gh * dim];
        let mut valid = vec![false; gw * gh];
        let mut buf = vec![0.0f64; dim];
        for cy in 0..gh {
            for cx in 0..gw {
                let mut mean = 0.0;
                for dy in -half..=half {
                    for dx in -half..=half {
                        let x = (cx as isize + dx).clamp(0, gw as isize - 1) as usize;
                        let y = (cy as isize + dy).clamp(0, gh as isize - 1) as usize;
                        let v = lum[y * gw + x];
                        buf[((dy + half) * patch as isize + dx + half) as usize] = v;
                        mean += v;
                    }
                }
                mean /= dim as f64;
                let mut norm2 = 0.0;
                for v in buf.iter_mut() {
                    *v -= mean;
                    norm2 += *v * *v;
                }
                let cell = cy * gw + cx;
                if norm2 > 1e-12 {
                    let inv = 1.0 / norm2.sqrt();
                    for (k, v) in buf.iter().enumerate() {
                        data[cell * dim + k] = v * inv;
                    }
                    valid[cell] = true;
                }
            }
        }

        Self { stride, width: gw, height: gh, dim, data, valid }
    }
}

/// Displacement field and raw similarity from one grid to another image.
#[derive(Debug, Clone)]
pub struct MatchField {
    pub grid_w: usize,
    pub grid_h: usize,
    pub stride: usize,
    /// Full-resolution displacement from the source cell center.
    pub displacement: Vec<[f64; 2]>,
    /// Descriptor similarity at the (integer) peak, in [-1, 1].
    pub similarity: Vec<f64>,
    pub valid: Vec<bool>,
}

impl MatchField {
    /// Bilinearly sample the displacement field at a full-resolution position.
    /// Returns `None` when any of the four surrounding cells is invalid or the
    /// position leaves the grid.
    pub fn sample_displacement(&self, x: f64, y: f64) -> Option<[f64; 2]> {
        let half = (self.stride as f64 - 1.0) / 2.0;
        let gx = (x - half) / self.stride as f64;
        let gy = (y - half) / self.stride as f64;
        if gx < 0.0 || gy < 0.0 {
            return None;
        }
        let x0 = gx.floor() as usize;
        let y0 = gy.floor() as usize;
        if x0 + 1 >= self.grid_w || y0 + 1 >= self.grid_h {
            return None;
        }
        let fx = gx - x0 as f64;
        let fy = gy - y0 as f64;
        let idx = |cx: usize, cy: usize| cy * self.grid_w + cx;
        let cells = [idx(x0, y0), idx(x0 + 1, y0), idx(x0, y0 + 1), idx(x0 + 1, y0 + 1)];
        if cells.iter().any(|&c| !self.valid[c]) {
            return None;
        }
        let w = [(1.0 - fx) * (1.0 - fy), fx * (1.0 - fy), (1.0 - fx) * fy, fx * fy];
        let mut out = [0.0; 2];
        for (c, wt) in cells.iter().zip(w) {
            out[0] += self.displacement[*c][0] * wt;
            out[1] += self.displacement[*c][1] * wt;
        }
        Some(out)
    }
}

/// Behaviour contract of a dense matcher: a displacement field and raw
/// similarity on the source grid.
pub trait DenseMatcher {
    fn match_pair(&self, source: &DescriptorGrid, target: &DescriptorGrid) -> MatchField;
}

/// Exhaustive patch-correlation matcher with sub-cell parabola refinement.
#[derive(Debug, Clone, Copy)]
pub struct NccMatcher {
    /// Search window half-extent in full-resolution pixels.
    pub search_radius_px: f64,
}

impl Default for NccMatcher {
    fn default() -> Self {
        Self { search_radius_px: 24.0 }
    }
}

impl NccMatcher {
    fn score(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    /// 1D parabola peak offset from scores at (-1, 0, +1), clamped to +-0.5.
    fn parabola(sm: f64, s0: f64, sp: f64) -> f64 {
        let denom = sm - 2.0 * s0 + sp;
        if denom >= -1e-12 {
            return 0.0; // not a proper maximum
        }
        (0.5 * (sm - sp) / denom).clamp(-0.5, 0.5)
    }
}

impl DenseMatcher for NccMatcher {
    fn match_pair(&self, source: &DescriptorGrid, target: &DescriptorGrid) -> MatchField {
        assert_eq!(source.stride, target.stride, "grids must share the feature stride");
        assert_eq!(source.dim, target.dim);
        let stride = source.stride;
        let radius = (self.search_radius_px / stride as f64).ceil() as isize;
        let n = source.width * source.height;
        let mut field = MatchField {
            grid_w: source.width,
            grid_h: source.height,
            stride,
            displacement: vec![[0.0; 2]; n],
            similarity: vec![0.0; n],
            valid: vec![false; n],
        };

        let mut scores = vec![f64::NEG_INFINITY; (2 * radius as usize + 1) * (2 * radius as usize + 1)];
        let swin = 2 * radius + 1;
        for cy in 0..source.height {
            for cx in 0..source.width {
                if !source.is_valid(cx, cy) {
                    continue;
                }
                let desc = source.descriptor(cx, cy);
                scores.iter_mut().for_each(|s| *s = f64::NEG_INFINITY);
                let mut best = f64::NEG_INFINITY;
                let mut best_dx = 0isize;
                let mut best_dy = 0isize;
                for dy in -radius..=radius {
                    let ty = cy as isize + dy;
                    if ty < 0 || ty >= target.height as isize {
                        continue;
                    }
                    for dx in -radius..=radius {
                        let tx = cx as isize + dx;
                        if tx < 0 || tx >= target.width as isize {
                            continue;
                        }
                        if !target.is_valid(tx as usize, ty as usize) {
                            continue;
                        }
                        let s = Self::score(desc, target.descriptor(tx as usize, ty as usize));
                        scores[((dy + radius) * swin + dx + radius) as usize] = s;
                        if s > best {
                            best = s;
                            best_dx = dx;
                            best_dy = dy;
                        }
                    }
                }
                if !best.is_finite() {
                    continue;
                }

                // Sub-cell refinement where the 1D neighbours exist.
                let at = |dx: isize, dy: isize| -> f64 {
                    if dx.abs() > radius || dy.abs() > radius {
                        return f64::NEG_INFINITY;
                    }
                    scores[((dy + radius) * swin + dx + radius) as usize]
                };
                let sx_m = at(best_dx - 1, best_dy);
                let sx_p = at(best_dx + 1, best_dy);
                let sy_m = at(best_dx, best_dy - 1);
                let sy_p = at(best_dx, best_dy + 1);
                let off_x = if sx_m.is_finite() && sx_p.is_finite() {
                    Self::parabola(sx_m, best, sx_p)
                } else {
                    0.0
                };
                let off_y = if sy_m.is_finite() && sy_p.is_finite() {
                    Self::parabola(sy_m, best, sy_p)
                } else {
                    0.0
                };

                let cell = cy * source.width + cx;
                let s = stride as f64;
                field.displacement[cell] =
                    [(best_dx as f64 + off_x) * s, (best_dy as f64 + off_y) * s];
                field.similarity[cell] = best;
                field.valid[cell] = true;
            }
        }
        field
    }
}

//! Row-major RGB image buffers, scalar maps, bilinear sampling, and P6 portable-pixmap IO.

use crate::error::{Result, SlamError};
use std::io::Read;
use std::path::Path;

/// Dense H×W×3 image, f64 channels, row-major, values conventionally in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRgb {
    pub width: usize,
    pub height: usize,
    /// Layout: `data[3 * (y * width + x) + channel]`.
    pub data: Vec<f64>,
}

impl ImageRgb {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![0.0; width * height * 3] }
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        let mut img = Self::new(width, height);
        for px in img.data.chunks_exact_mut(3) {
            px.copy_from_slice(&rgb);
        }
        img
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = 3 * (y * self.width + x);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        let i = 3 * (y * self.width + x);
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn same_dims(&self, other: &ImageRgb) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Bilinear sample at continuous pixel coordinates, where integer
    /// coordinates `(x, y)` address pixel centers. Coordinates are clamped
    /// to the image border.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> [f64; 3] {
        let xc = x.clamp(0.0, (self.width - 1) as f64);
        let yc = y.clamp(0.0, (self.height - 1) as f64);
        let x0 = xc.floor() as usize;
        let y0 = yc.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = xc - x0 as f64;
        let fy = yc - y0 as f64;
        let p00 = self.pixel(x0, y0);
        let p10 = self.pixel(x1, y0);
        let p01 = self.pixel(x0, y1);
        let p11 = self.pixel(x1, y1);
        let mut out = [0.0; 3];
        for c in 0..3 {
            let top = p00[c] * (1.0 - fx) + p10[c] * fx;
            let bot = p01[c] * (1.0 - fx) + p11[c] * fx;
            out[c] = top * (1.0 - fy) + bot * fy;
        }
        out
    }

    /// Per-pixel luminance (channel mean).
    pub fn luminance(&self) -> ScalarMap {
        let mut out = ScalarMap::new(self.width, self.height);
        for (i, px) in self.data.chunks_exact(3).enumerate() {
            out.data[i] = (px[0] + px[1] + px[2]) / 3.0;
        }
        out
    }

    /// Central-difference gradient magnitude of the luminance.
    /// One-sided differences at the border.
    pub fn gradient_magnitude(&self) -> ScalarMap {
        let lum = self.luminance();
        let mut out = ScalarMap::new(self.width, self.height);
        let w = self.width;
        let h = self.height;
        for y in 0..h {
            for x in 0..w {
                let xm = x.saturating_sub(1);
                let xp = (x + 1).min(w - 1);
                let ym = y.saturating_sub(1);
                let yp = (y + 1).min(h - 1);
                let dx = (lum.get(xp, y) - lum.get(xm, y)) / (xp - xm).max(1) as f64;
                let dy = (lum.get(x, yp) - lum.get(x, ym)) / (yp - ym).max(1) as f64;
                out.set(x, y, (dx * dx + dy * dy).sqrt());
            }
        }
        out
    }

    /// Encode as binary P6 with 8-bit channels; values clamped to [0, 1].
    pub fn write_ppm(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(self.width * self.height * 3 + 32);
        buf.extend_from_slice(format!("P6\n{} {}\n255\n", self.width, self.height).as_bytes());
        for v in &self.data {
            buf.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
        }
        std::fs::write(path, buf)?;
        Ok(())
    }

    /// Decode a binary P6 pixmap produced by [`ImageRgb::write_ppm`] or any
    /// standard writer (maxval 255).
    pub fn read_ppm(path: &Path) -> Result<Self> {
        let mut raw = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut raw)?;
        Self::decode_ppm(&raw).map_err(|m| SlamError::Dataset(format!("{}: {m}", path.display())))
    }

    fn decode_ppm(raw: &[u8]) -> std::result::Result<Self, String> {
        let mut pos = 0usize;
        let mut fields = Vec::new();
        // Header: magic, width, height, maxval; '#' starts a comment.
        while fields.len() < 4 {
            if pos >= raw.len() {
                return Err("truncated header".into());
            }
            match raw[pos] {
                b'#' => {
                    while pos < raw.len() && raw[pos] != b'\n' {
                        pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => pos += 1,
                _ => {
                    let start = pos;
                    while pos < raw.len() && !raw[pos].is_ascii_whitespace() {
                        pos += 1;
                    }
                    fields.push(std::str::from_utf8(&raw[start..pos]).map_err(|_| "bad header")?.to_owned());
                }
            }
        }
        if fields[0] != "P6" {
            return Err(format!("unsupported magic {}", fields[0]));
        }
        let width: usize = fields[1].parse().map_err(|_| "bad width")?;
        let height: usize = fields[2].parse().map_err(|_| "bad height")?;
        let maxval: usize = fields[3].parse().map_err(|_| "bad maxval")?;
        if maxval != 255 {
            return Err(format!("unsupported maxval {maxval}"));
        }
        pos += 1; // single whitespace after maxval
        let need = width * height * 3;
        if raw.len() < pos + need {
            return Err("truncated pixel data".into());
        }
        let data = raw[pos..pos + need].iter().map(|&b| b as f64 / 255.0).collect();
        Ok(Self { width, height, data })
    }
}

/// Dense H×W scalar field (opacity maps, weights, luminance).
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl ScalarMap {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![0.0; width * height] }
    }

    pub fn filled(width: usize, height: usize, v: f64) -> Self {
        Self { width, height, data: vec![v; width * height] }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }
}

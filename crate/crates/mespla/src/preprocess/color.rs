//! HSV color-space conversion and the nighttime brightness simulation.
//!
//! V = max(R,G,B); S = (V - min)/V with S = 0 when V = 0; H by the usual
//! 60-degree sector formulas with negative results wrapped into [0, 360).
//! Night simulation scales only V by a factor in (0, 1), leaving hue and
//! saturation untouched.

use crate::error::{Error, Result};
use crate::sensors::Image;

/// HSV planes of an image: H in [0, 360), S and V in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct HsvImage {
    pub width: usize,
    pub height: usize,
    pub h: Vec<f64>,
    pub s: Vec<f64>,
    pub v: Vec<f64>,
}

impl HsvImage {
    pub fn validate(&self) -> Result<()> {
        let n = self.width * self.height;
        if self.h.len() != n || self.s.len() != n || self.v.len() != n {
            return Err(Error::Format(format!(
                "hsv planes must each hold {n} values"
            )));
        }
        for i in 0..n {
            if !(0.0..360.0).contains(&self.h[i])
                || !(0.0..=1.0).contains(&self.s[i])
                || !(0.0..=1.0).contains(&self.v[i])
            {
                return Err(Error::Domain(format!(
                    "hsv out of range at pixel {i}: ({}, {}, {})",
                    self.h[i], self.s[i], self.v[i]
                )));
            }
        }
        Ok(())
    }
}

/// Per-pixel HSV triple from one RGB triple in [0, 1].
pub fn rgb_pixel_to_hsv(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let v = r.max(g).max(b);
    let mn = r.min(g).min(b);
    let s = if v == 0.0 { 0.0 } else { (v - mn) / v };
    let delta = v - mn;
    let mut h = if delta == 0.0 {
        0.0
    } else if v == r {
        60.0 * ((g - b) / delta)
    } else if v == g {
        60.0 * (2.0 + (b - r) / delta)
    } else {
        60.0 * (4.0 + (r - g) / delta)
    };
    if h < 0.0 {
        h += 360.0;
    }
    if h >= 360.0 {
        h -= 360.0;
    }
    (h, s, v)
}

/// Inverse of [`rgb_pixel_to_hsv`] by the 60-degree sector construction.
pub fn hsv_pixel_to_rgb(h: f64, s: f64, v: f64) -> (f64, f64, f64) {
    let c = v * s;
    let hp = h / 60.0;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r1, g1, b1) = match hp as usize {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    (r1 + m, g1 + m, b1 + m)
}

pub fn rgb_to_hsv(img: &Image) -> Result<HsvImage> {
    img.validate_values()
        .map_err(|_| Error::Domain("rgb_to_hsv input has values outside [0, 1]".into()))?;
    let n = img.width * img.height;
    let mut h = Vec::with_capacity(n);
    let mut s = Vec::with_capacity(n);
    let mut v = Vec::with_capacity(n);
    for px in img.data.chunks_exact(3) {
        let (hh, ss, vv) = rgb_pixel_to_hsv(px[0] as f64, px[1] as f64, px[2] as f64);
        h.push(hh);
        s.push(ss);
        v.push(vv);
    }
    Ok(HsvImage {
        width: img.width,
        height: img.height,
        h,
        s,
        v,
    })
}

pub fn hsv_to_rgb(img: &HsvImage) -> Result<Image> {
    img.validate()?;
    let mut data = Vec::with_capacity(img.width * img.height * 3);
    for i in 0..img.width * img.height {
        let (r, g, b) = hsv_pixel_to_rgb(img.h[i], img.s[i], img.v[i]);
        data.push(r as f32);
        data.push(g as f32);
        data.push(b as f32);
    }
    Image::from_data(img.width, img.height, data)
}

/// Brightness scaling factor for the night simulation, open interval (0, 1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NightConfig {
    alpha: f64,
}

impl NightConfig {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::Config(format!(
                "night alpha must lie strictly inside (0, 1), got {alpha}"
            )));
        }
        Ok(Self { alpha })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }
}

/// Matches the observed day-to-night mean-brightness ratio of roughly
/// 19/135.
pub const DEFAULT_NIGHT_ALPHA: f64 = 0.14;

/// Scale the V channel by alpha without touching hue or saturation.
pub fn simulate_night(img: &Image, cfg: &NightConfig) -> Result<Image> {
    let mut hsv = rgb_to_hsv(img)?;
    for v in &mut hsv.v {
        *v *= cfg.alpha;
    }
    hsv_to_rgb(&hsv)
}

/// Mean of the per-pixel V channel; the unitless brightness proxy.
pub fn mean_brightness(img: &Image) -> f64 {
    if img.data.is_empty() {
        return 0.0;
    }
    let mut sum = 0.0f64;
    for px in img.data.chunks_exact(3) {
        sum += (px[0].max(px[1]).max(px[2])) as f64;
    }
    sum / (img.width * img.height) as f64
}

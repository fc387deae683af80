//! Image-level photometric augmentation: color jitter, Gaussian blur and
//! grayscale on RGB images in `[0, 1]`. Label maps are never touched.

use serde::{Deserialize, Serialize};

use crate::error::{config_err, shape_err, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhotometricConfig {
    pub enabled: bool,
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    pub hue: f64,
    /// Probability of applying each of the four jitters, drawn independently.
    pub jitter_prob: f64,
    pub blur_prob: f64,
    pub blur_sigma: (f64, f64),
    pub grayscale_prob: f64,
}

impl Default for PhotometricConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            brightness: 0.4,
            contrast: 0.4,
            saturation: 0.4,
            hue: 0.1,
            jitter_prob: 0.8,
            blur_prob: 0.5,
            blur_sigma: (0.1, 2.0),
            grayscale_prob: 0.2,
        }
    }
}

impl PhotometricConfig {
    pub fn off() -> Self {
        Self {
            enabled: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("jitter_prob", self.jitter_prob),
            ("blur_prob", self.blur_prob),
            ("grayscale_prob", self.grayscale_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(config_err!("photometric.{} = {} outside [0, 1]", name, p));
            }
        }
        for (name, s) in [
            ("brightness", self.brightness),
            ("contrast", self.contrast),
            ("saturation", self.saturation),
            ("hue", self.hue),
        ] {
            if s < 0.0 {
                return Err(config_err!("photometric.{} must be >= 0", name));
            }
        }
        if self.hue > 0.5 {
            return Err(config_err!("photometric.hue must be <= 0.5"));
        }
        let (lo, hi) = self.blur_sigma;
        if !(lo > 0.0 && hi >= lo) {
            return Err(config_err!(
                "photometric blur sigma range ({}, {}) invalid",
                lo,
                hi
            ));
        }
        Ok(())
    }
}

/// Concrete draws for one image; `None` skips that step.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PhotometricParams {
    pub brightness: Option<f64>,
    pub contrast: Option<f64>,
    pub saturation: Option<f64>,
    pub hue: Option<f64>,
    pub grayscale: bool,
    pub blur_sigma: Option<f64>,
}

impl PhotometricParams {
    pub fn sample(cfg: &PhotometricConfig, rng: &mut Rng) -> Self {
        if !cfg.enabled {
            return Self::default();
        }
        let factor = |strength: f64, rng: &mut Rng| {
            let fire = rng.bernoulli(cfg.jitter_prob);
            let v = rng.range((1.0 - strength).max(0.0), 1.0 + strength);
            (fire && strength > 0.0).then_some(v)
        };
        let brightness = factor(cfg.brightness, rng);
        let contrast = factor(cfg.contrast, rng);
        let saturation = factor(cfg.saturation, rng);
        let hue_fire = rng.bernoulli(cfg.jitter_prob);
        let hue_shift = rng.range(-cfg.hue, cfg.hue);
        let grayscale = rng.bernoulli(cfg.grayscale_prob);
        let blur_fire = rng.bernoulli(cfg.blur_prob);
        let sigma = rng.range(cfg.blur_sigma.0, cfg.blur_sigma.1);
        Self {
            brightness,
            contrast,
            saturation,
            hue: (hue_fire && cfg.hue > 0.0).then_some(hue_shift),
            grayscale,
            blur_sigma: blur_fire.then_some(sigma),
        }
    }
}

/// Applies independently drawn photometric parameters to every image of the batch.
pub fn photometric<T: Scalar>(
    img: &Tensor<T>,
    cfg: &PhotometricConfig,
    rng: &mut Rng,
) -> Result<Tensor<T>> {
    check_rgb(img)?;
    let params: Vec<_> = (0..img.batch())
        .map(|_| PhotometricParams::sample(cfg, rng))
        .collect();
    apply_params(img, &params)
}

/// Applies `params[k]` to image `k`, clamping to `[0, 1]` after every step.
#[allow(clippy::needless_range_loop)]
pub fn apply_params<T: Scalar>(img: &Tensor<T>, params: &[PhotometricParams]) -> Result<Tensor<T>> {
    check_rgb(img)?;
    if params.len() != img.batch() {
        return Err(shape_err!(
            "{} parameter sets for batch {}",
            params.len(),
            img.batch()
        ));
    }
    let (h, w) = (img.height(), img.width());
    let plane = h * w;
    let mut out = Vec::with_capacity(img.len());
    for (k, p) in params.iter().enumerate() {
        let mut rgb: [Vec<f64>; 3] =
            std::array::from_fn(|c| img.plane(k, c).iter().map(|v| v.widen()).collect());
        if let Some(f) = p.brightness {
            for ch in rgb.iter_mut() {
                ch.iter_mut().for_each(|v| *v = clamp01(*v * f));
            }
        }
        if let Some(f) = p.contrast {
            let mean = (0..plane).map(|i| luma(&rgb, i)).sum::<f64>() / plane as f64;
            for ch in rgb.iter_mut() {
                ch.iter_mut()
                    .for_each(|v| *v = clamp01((*v - mean) * f + mean));
            }
        }
        if let Some(f) = p.saturation {
            for i in 0..plane {
                let g = luma(&rgb, i);
                for ch in rgb.iter_mut() {
                    ch[i] = clamp01(g + (ch[i] - g) * f);
                }
            }
        }
        if let Some(shift) = p.hue {
            for i in 0..plane {
                let (hh, s, v) = rgb_to_hsv(rgb[0][i], rgb[1][i], rgb[2][i]);
                let (r, g, b) = hsv_to_rgb((hh + shift).rem_euclid(1.0), s, v);
                rgb[0][i] = clamp01(r);
                rgb[1][i] = clamp01(g);
                rgb[2][i] = clamp01(b);
            }
        }
        if p.grayscale {
            for i in 0..plane {
                let g = clamp01(luma(&rgb, i));
                rgb.iter_mut().for_each(|ch| ch[i] = g);
            }
        }
        if let Some(sigma) = p.blur_sigma {
            for ch in rgb.iter_mut() {
                *ch = gaussian_blur(ch, h, w, sigma);
                ch.iter_mut().for_each(|v| *v = clamp01(*v));
            }
        }
        for ch in &rgb {
            out.extend(ch.iter().map(|&v| T::narrow(v)));
        }
    }
    Tensor::new(img.dims(), out)
}

fn check_rgb<T: Scalar>(img: &Tensor<T>) -> Result<()> {
    if img.channels() != 3 {
        return Err(shape_err!(
            "photometric transforms need 3 channels, got {}",
            img.channels()
        ));
    }
    Ok(())
}

#[inline]
fn clamp01(v: f64) -> f64 {
    v.clamp(0.0, 1.0)
}

#[inline]
fn luma(rgb: &[Vec<f64>; 3], i: usize) -> f64 {
    LUMA[0] * rgb[0][i] + LUMA[1] * rgb[1][i] + LUMA[2] * rgb[2][i]
}

fn rgb_to_hsv(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let h = if d <= 0.0 {
        0.0
    } else if max == r {
        ((g - b) / d).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / d + 2.0) / 6.0
    } else {
        ((r - g) / d + 4.0) / 6.0
    };
    let s = if max <= 0.0 { 0.0 } else { d / max };
    (h, s, max)
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> (f64, f64, f64) {
    let h6 = h * 6.0;
    let i = h6.floor();
    let f = h6 - i;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    match (i as i64).rem_euclid(6) {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    }
}

/// Mirror index into `0..n` without repeating the edge sample.
fn reflect(mut i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let n = n as isize;
    loop {
        if i < 0 {
            i = -i;
        } else if i >= n {
            i = 2 * (n - 1) - i;
        } else {
            return i as usize;
        }
    }
}

/// Normalized Gaussian taps with radius `ceil(3σ)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil().max(1.0) as isize;
    let taps: Vec<f64> = (-radius..=radius)
        .map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / total).collect()
}

/// Separable Gaussian blur of one `h × w` plane with reflected borders.
pub fn gaussian_blur(plane: &[f64], h: usize, w: usize, sigma: f64) -> Vec<f64> {
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = k
                .iter()
                .enumerate()
                .map(|(j, &t)| t * plane[y * w + reflect(x as isize + j as isize - r, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = k
                .iter()
                .enumerate()
                .map(|(j, &t)| t * tmp[reflect(y as isize + j as isize - r, h) * w + x])
                .sum();
        }
    }
    out
}

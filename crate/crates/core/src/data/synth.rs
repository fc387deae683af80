//! Procedural driving-like scenes rendered under per-domain styles.

use serde::{Deserialize, Serialize};

use crate::data::Role;
use crate::error::{config_err, Result};
use crate::photometric::gaussian_blur;
use crate::rng::Rng;
use crate::tensor::{LabelMap, Tensor};

pub const CLASS_NAMES: [&str; 6] = ["background", "road", "sky", "blob-a", "blob-b", "stripe"];
const BACKGROUND: u8 = 0;
const ROAD: u8 = 1;
const SKY: u8 = 2;
const BLOB_A: u8 = 3;
const BLOB_B: u8 = 4;
const STRIPE: u8 = 5;

/// Global color affine, noise and blur shared by every image of a domain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainStyle {
    pub name: String,
    pub role: Role,
    pub gain: [f64; 3],
    pub bias: [f64; 3],
    pub noise: f64,
    pub blur: f64,
}

impl DomainStyle {
    fn new(name: &str, role: Role, gain: [f64; 3], bias: [f64; 3], noise: f64, blur: f64) -> Self {
        Self {
            name: name.into(),
            role,
            gain,
            bias,
            noise,
            blur,
        }
    }

    pub fn identity(name: &str, role: Role) -> Self {
        Self::new(name, role, [1.0; 3], [0.0; 3], 0.0, 0.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub size: usize,
    pub class_colors: [[f64; 3]; 6],
    /// Per-scene uniform jitter of each class color.
    pub color_jitter: f64,
    /// Amplitude of the class-specific texture patterns.
    pub texture: f64,
    pub max_blobs: usize,
    /// Per-image uniform jitter of domain gain (relative) and bias (absolute).
    pub style_jitter: f64,
    pub domains: Vec<DomainStyle>,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            size: 64,
            class_colors: [
                [0.45, 0.55, 0.35],
                [0.35, 0.35, 0.38],
                [0.55, 0.70, 0.90],
                [0.80, 0.30, 0.25],
                [0.25, 0.35, 0.75],
                [0.90, 0.85, 0.30],
            ],
            color_jitter: 0.05,
            texture: 0.08,
            max_blobs: 2,
            style_jitter: 0.06,
            domains: vec![
                DomainStyle::new(
                    "source",
                    Role::Source,
                    [1.0, 1.0, 1.0],
                    [0.0, 0.0, 0.0],
                    0.02,
                    0.0,
                ),
                DomainStyle::new(
                    "rainy",
                    Role::Compound,
                    [0.5, 0.55, 0.7],
                    [0.0, 0.03, 0.12],
                    0.06,
                    0.8,
                ),
                DomainStyle::new(
                    "snowy",
                    Role::Compound,
                    [0.5, 0.5, 0.5],
                    [0.45, 0.45, 0.48],
                    0.04,
                    0.0,
                ),
                DomainStyle::new(
                    "cloudy",
                    Role::Compound,
                    [0.65, 0.6, 0.5],
                    [0.2, 0.15, 0.02],
                    0.03,
                    0.5,
                ),
                DomainStyle::new(
                    "overcast",
                    Role::Open,
                    [0.7, 0.45, 0.7],
                    [0.15, 0.05, 0.2],
                    0.05,
                    0.6,
                ),
            ],
        }
    }
}

impl SceneSpec {
    pub fn num_classes(&self) -> usize {
        CLASS_NAMES.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.size < 8 {
            return Err(config_err!("scene size {} is below 8", self.size));
        }
        let count = |r: Role| self.domains.iter().filter(|d| d.role == r).count();
        if count(Role::Source) != 1 {
            return Err(config_err!("scene spec needs exactly one source domain"));
        }
        if count(Role::Compound) < 2 {
            return Err(config_err!(
                "scene spec needs at least two compound domains"
            ));
        }
        if count(Role::Open) < 1 {
            return Err(config_err!("scene spec needs at least one open domain"));
        }
        let mut names: Vec<&str> = self.domains.iter().map(|d| d.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(config_err!("duplicate domain names"));
        }
        for d in &self.domains {
            if d.name.is_empty() || d.name.contains(['/', '\\', ',']) {
                return Err(config_err!("invalid domain name {:?}", d.name));
            }
            if d.noise < 0.0 || d.blur < 0.0 {
                return Err(config_err!(
                    "domain {}: noise and blur must be >= 0",
                    d.name
                ));
            }
        }
        Ok(())
    }

    pub fn domain(&self, name: &str) -> Option<&DomainStyle> {
        self.domains.iter().find(|d| d.name == name)
    }
}

/// Style-free scene: image in `[0, 1]` with shape `[1, 3, S, S]` plus labels.
#[allow(clippy::needless_range_loop)]
pub fn render_scene(spec: &SceneSpec, scene_seed: u64) -> (Tensor<f32>, LabelMap) {
    let s = spec.size;
    let sf = s as f64;
    let mut rng = Rng::new(scene_seed, 1);
    let mut labels = vec![BACKGROUND; s * s];
    let paint = |labels: &mut Vec<u8>, class: u8, inside: &dyn Fn(f64, f64) -> bool| {
        for y in 0..s {
            for x in 0..s {
                let (u, v) = ((x as f64 + 0.5) / sf, (y as f64 + 0.5) / sf);
                if inside(u, v) {
                    labels[y * s + x] = class;
                }
            }
        }
    };

    let horizon = rng.range(0.15, 0.35);
    paint(&mut labels, SKY, &|_, v| v < horizon);
    let road_top = rng.range(0.55, 0.75);
    let road_cx = rng.range(0.35, 0.65);
    let (top_w, bottom_w) = (rng.range(0.05, 0.12), rng.range(0.3, 0.5));
    paint(&mut labels, ROAD, &|u, v| {
        if v < road_top {
            return false;
        }
        let t = (v - road_top) / (1.0 - road_top);
        (u - road_cx).abs() < top_w + t * (bottom_w - top_w)
    });
    for _ in 0..1 + rng.below(spec.max_blobs.max(1)) {
        let (cx, cy) = (rng.range(0.1, 0.9), rng.range(horizon, 0.8));
        let (rx, ry) = (rng.range(0.07, 0.16), rng.range(0.07, 0.16));
        paint(&mut labels, BLOB_A, &|u, v| {
            ((u - cx) / rx).powi(2) + ((v - cy) / ry).powi(2) < 1.0
        });
    }
    for _ in 0..1 + rng.below(spec.max_blobs.max(1)) {
        let (x0, y0) = (rng.range(0.0, 0.8), rng.range(horizon - 0.1, 0.75));
        let (w, h) = (rng.range(0.08, 0.22), rng.range(0.08, 0.2));
        paint(&mut labels, BLOB_B, &|u, v| {
            u >= x0 && u < x0 + w && v >= y0 && v < y0 + h
        });
    }
    let (sx, slope, half) = (
        rng.range(0.1, 0.9),
        rng.range(-0.3, 0.3),
        rng.range(0.02, 0.035),
    );
    let stripe_top = rng.range(0.05, 0.4);
    paint(&mut labels, STRIPE, &|u, v| {
        v > stripe_top && (u - (sx + slope * (v - 0.5))).abs() < half
    });

    let colors: Vec<[f64; 3]> = spec
        .class_colors
        .iter()
        .map(|c| c.map(|v| v + rng.range(-spec.color_jitter, spec.color_jitter)))
        .collect();
    let (phase_x, phase_y) = (rng.range(0.0, 6.3), rng.range(0.0, 6.3));
    let a = spec.texture;
    let mut img = Tensor::<f32>::zeros([1, 3, s, s]);
    for y in 0..s {
        for x in 0..s {
            let (u, v) = ((x as f64 + 0.5) / sf, (y as f64 + 0.5) / sf);
            let class = labels[y * s + x];
            let shade = match class {
                BACKGROUND => a * ((u * 3.0 + phase_x).sin() * (v * 2.0 + phase_y).cos()),
                ROAD => a * if y % 4 < 2 { 1.0 } else { -1.0 },
                SKY => a * (1.0 - 2.0 * v / horizon.max(1e-3)),
                BLOB_A => -a * (((u * 17.0 + phase_x).sin() + (v * 13.0).cos()) * 0.5).abs(),
                BLOB_B => a * if (x / 2 + y / 2) % 2 == 0 { 1.0 } else { -1.0 },
                _ => 0.0,
            };
            for c in 0..3 {
                let value = (colors[class as usize][c] + shade).clamp(0.0, 1.0);
                img.set(0, c, y, x, value as f32);
            }
        }
    }
    let labels = LabelMap::new([1, s, s], labels).expect("dims match");
    (img, labels)
}

/// Applies a domain style. Noise and jitter draw from `scene_seed`, so equal
/// styles give pixel-identical images of the same scene.
pub fn apply_style(
    clean: &Tensor<f32>,
    style: &DomainStyle,
    jitter: f64,
    scene_seed: u64,
) -> Tensor<f32> {
    let [n, c, h, w] = clean.dims();
    let mut rng = Rng::new(scene_seed, 2);
    let mut out = clean.clone();
    for b in 0..n {
        for ch in 0..c.min(3) {
            let gain = style.gain[ch] * (1.0 + rng.range(-jitter, jitter));
            let bias = style.bias[ch] + rng.range(-jitter, jitter) * 0.5;
            let mut plane: Vec<f64> = clean
                .plane(b, ch)
                .iter()
                .map(|&v| gain * v as f64 + bias)
                .collect();
            if style.blur > 0.0 {
                plane = gaussian_blur(&plane, h, w, style.blur);
            }
            let off = out.offset(b, ch, 0, 0);
            for (i, v) in plane.into_iter().enumerate() {
                let noisy = v + style.noise * rng.normal();
                out.data_mut()[off + i] = noisy.clamp(0.0, 1.0) as f32;
            }
        }
    }
    out
}

pub fn render(spec: &SceneSpec, style: &DomainStyle, scene_seed: u64) -> (Tensor<f32>, LabelMap) {
    let (clean, labels) = render_scene(spec, scene_seed);
    (
        apply_style(&clean, style, spec.style_jitter, scene_seed),
        labels,
    )
}

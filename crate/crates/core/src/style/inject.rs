use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use crate::autograd::{Graph, Var};
use crate::error::{config_err, Error, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::style::{diff, GridSize, PatchGrid};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    Off,
    Intra,
    Inter,
    MixStyle,
    CrossNorm,
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim().to_ascii_lowercase().as_str() {
            "off" | "none" => Variant::Off,
            "intra" => Variant::Intra,
            "inter" => Variant::Inter,
            "mixstyle" => Variant::MixStyle,
            "crossnorm" => Variant::CrossNorm,
            other => return Err(config_err!("unknown style variant '{}'", other)),
        })
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Off => "off",
            Variant::Intra => "intra",
            Variant::Inter => "inter",
            Variant::MixStyle => "mixstyle",
            Variant::CrossNorm => "crossnorm",
        })
    }
}

/// Where and how often a style operator fires during training.
///
/// Site 0 is the input image; site `l ≥ 1` is the end of encoder block `l`,
/// before its pooling layer.
#[derive(Clone, Debug, PartialEq)]
pub struct InjectionConfig {
    pub beta: f64,
    pub sites: BTreeSet<usize>,
    pub variant: Variant,
    pub grid: GridSize,
    pub mix_alpha: f64,
    /// Forbid fixed points in the drawn permutations.
    pub derangement: bool,
}

impl Default for InjectionConfig {
    fn default() -> Self {
        Self {
            beta: 0.3,
            sites: [1, 2].into_iter().collect(),
            variant: Variant::Inter,
            grid: GridSize { rows: 2, cols: 2 },
            mix_alpha: 0.1,
            derangement: false,
        }
    }
}

impl InjectionConfig {
    pub fn off() -> Self {
        Self {
            beta: 0.0,
            variant: Variant::Off,
            ..Self::default()
        }
    }

    pub fn is_active(&self) -> bool {
        self.variant != Variant::Off && self.beta > 0.0 && !self.sites.is_empty()
    }

    pub fn validate(&self, num_blocks: usize) -> Result<()> {
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(config_err!("beta {} outside [0, 1]", self.beta));
        }
        if let Some(&s) = self.sites.iter().find(|&&s| s > num_blocks) {
            return Err(config_err!(
                "injection site {} beyond {} blocks",
                s,
                num_blocks
            ));
        }
        if self.variant == Variant::MixStyle && self.mix_alpha <= 0.0 {
            return Err(config_err!("mix_alpha must be positive"));
        }
        Ok(())
    }
}

/// Applies the configured operator with probability `beta` when training;
/// otherwise returns `x` unchanged.
pub fn inject<T: Scalar>(
    g: &mut Graph<T>,
    x: Var,
    cfg: &InjectionConfig,
    rng: &mut Rng,
    training: bool,
) -> Result<Var> {
    if !training || cfg.variant == Variant::Off {
        return Ok(x);
    }
    if !rng.bernoulli(cfg.beta) {
        return Ok(x);
    }
    match cfg.variant {
        Variant::Off => Ok(x),
        Variant::Intra => Ok(diff::cpss_intra(g, x, cfg.grid, rng, cfg.derangement)?.0),
        Variant::Inter => Ok(diff::cpss_inter(g, x, cfg.grid, rng, cfg.derangement)?.0),
        Variant::MixStyle => diff::mixstyle_random(g, x, rng, cfg.mix_alpha),
        Variant::CrossNorm => diff::crossnorm(g, x, rng),
    }
}

/// [`inject`] on a plain tensor.
pub fn inject_tensor<T: Scalar>(
    x: &Tensor<T>,
    cfg: &InjectionConfig,
    rng: &mut Rng,
    training: bool,
) -> Result<Tensor<T>> {
    // Fail on unusable grids even when the draw would skip the operator.
    if training && matches!(cfg.variant, Variant::Intra | Variant::Inter) {
        PatchGrid::fit(cfg.grid, x.height(), x.width())?;
    }
    let mut g = Graph::new();
    let v = g.constant(x.clone());
    let out = inject(&mut g, v, cfg, rng, training)?;
    Ok(g.value(out).clone())
}
